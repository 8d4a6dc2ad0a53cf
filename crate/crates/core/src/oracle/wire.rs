//! JSON bodies of the `gem-infer-v1` HTTP protocol.
//!
//! - `POST /v1/classify` with [`ClassifyRequest`] → [`ClassifyResponse`]
//! - `GET /v1/meta` → [`MetaResponse`]
//! - errors carry an [`ErrorResponse`] body (400 malformed input, 401 bad
//!   token, 503 overload)

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ProbVector;

pub const PROTOCOL: &str = "gem-infer-v1";
pub const CLASSIFY_PATH: &str = "/v1/classify";
pub const META_PATH: &str = "/v1/meta";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyRequest {
    pub features: Vec<f64>,
}

/// Either an ordered `probabilities` array (optionally with `labels`) or a
/// `scores` object keyed by category name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResponse {
    pub input_dim: usize,
    pub num_classes: usize,
    pub labels: Vec<String>,
    pub data_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// Default category names `"0"`, `"1"`, …
pub fn default_labels(num_classes: usize) -> Vec<String> {
    (0..num_classes).map(|i| i.to_string()).collect()
}

/// Converts a classify response into a [`ProbVector`] ordered by
/// `categories`.
///
/// Scores summing to within `[0.99, 1.01]` are renormalised; anything
/// outside that band is a protocol error.
pub fn decode_scores(
    resp: &ClassifyResponse,
    categories: Option<&[String]>,
    num_classes: Option<usize>,
) -> Result<ProbVector> {
    let raw: Vec<f64> = match (&resp.scores, &resp.probabilities) {
        (Some(scores), _) => {
            let order = categories.ok_or_else(|| {
                Error::Protocol("response uses named scores but no category order is configured".into())
            })?;
            order
                .iter()
                .map(|name| {
                    scores
                        .get(name)
                        .copied()
                        .ok_or_else(|| Error::Protocol(format!("response is missing a score for category {name:?}")))
                })
                .collect::<Result<_>>()?
        }
        (None, Some(probs)) => match (categories, &resp.labels) {
            (Some(order), Some(labels)) => {
                if labels.len() != probs.len() {
                    return Err(Error::Protocol(format!(
                        "{} labels for {} probabilities",
                        labels.len(),
                        probs.len()
                    )));
                }
                order
                    .iter()
                    .map(|name| {
                        labels
                            .iter()
                            .position(|l| l == name)
                            .map(|i| probs[i])
                            .ok_or_else(|| Error::Protocol(format!("response has no label {name:?}")))
                    })
                    .collect::<Result<_>>()?
            }
            _ => probs.clone(),
        },
        (None, None) => {
            return Err(Error::Protocol(
                "response has neither `probabilities` nor `scores`".into(),
            ))
        }
    };

    if let Some(c) = num_classes {
        if raw.len() != c {
            return Err(Error::Protocol(format!("expected {c} scores, got {}", raw.len())));
        }
    }
    if raw.len() < 2 {
        return Err(Error::Protocol(format!(
            "expected at least 2 scores, got {}",
            raw.len()
        )));
    }
    if let Some(i) = raw.iter().position(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Protocol(format!("score {i} = {} is not a probability", raw[i])));
    }
    let sum: f64 = raw.iter().sum();
    if !(0.99..=1.01).contains(&sum) {
        return Err(Error::Protocol(format!("scores sum to {sum}, outside [0.99, 1.01]")));
    }
    // leave already-normalised vectors bit-exact
    let probs = if (sum - 1.0).abs() > 1e-12 {
        raw.iter().map(|p| (p / sum).min(1.0)).collect()
    } else {
        raw.iter().map(|p| p.min(1.0)).collect()
    };
    ProbVector::new(probs).map_err(|e| Error::Protocol(e.to_string()))
}
