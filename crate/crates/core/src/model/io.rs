//! `gem-model-v1`: a single JSON document holding every parameter.
//!
//! Numbers are written in shortest round-trip decimal form, so a
//! save/load cycle reproduces each parameter exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::numerics::Mat;

use super::{Activation, Dense, MlpModel};

pub const FORMAT_VERSION: &str = "gem-model-v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format_version: String,
    input_dim: usize,
    num_classes: usize,
    data_range: [f64; 2],
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    activation: Activation,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl MlpModel {
    pub fn to_json(&self) -> Result<String> {
        let (lo, hi) = self.data_range;
        let doc = ModelDoc {
            format_version: FORMAT_VERSION.to_string(),
            input_dim: self.input_dim(),
            num_classes: self.num_classes(),
            data_range: [lo, hi],
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    rows: l.weights.rows(),
                    cols: l.weights.cols(),
                    activation: l.activation,
                    weights: l.weights.as_slice().to_vec(),
                    biases: l.biases.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        if doc.format_version != FORMAT_VERSION {
            return arg_err(format!(
                "unsupported model format {:?} (expected {FORMAT_VERSION})",
                doc.format_version
            ));
        }
        let layers = doc
            .layers
            .into_iter()
            .map(|l| {
                Ok(Dense {
                    weights: Mat::new(l.rows, l.cols, l.weights)?,
                    biases: l.biases,
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = MlpModel::new(layers, (doc.data_range[0], doc.data_range[1]))?;
        if model.input_dim() != doc.input_dim || model.num_classes() != doc.num_classes {
            return Err(Error::Argument(format!(
                "declared shape {}→{} does not match the layers ({}→{})",
                doc.input_dim,
                doc.num_classes,
                model.input_dim(),
                model.num_classes()
            )));
        }
        Ok(model)
    }
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    MlpModel::from_json(&fs::read_to_string(path)?)
}
