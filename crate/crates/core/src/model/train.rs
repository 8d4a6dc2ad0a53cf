use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::harness::Dataset;
use crate::numerics::{Mat, Rng};
use crate::oracle::PROB_FLOOR;

use super::{ArchSpec, MlpModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// 0 disables dropout.
    #[serde(default)]
    pub dropout_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.05,
            seed: 0,
            dropout_rate: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return arg_err("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return arg_err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return arg_err(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean weighted training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// One minibatch: inputs, labels and per-sample loss weights.
pub(crate) struct Batch {
    pub inputs: Mat,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
}

pub(crate) fn gather_rows(data: &Dataset, idx: &[usize]) -> Mat {
    let d = data.input_dim();
    let mut out = Mat::zeros(idx.len(), d);
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(data.features().row(i));
    }
    out
}

pub(crate) fn check_dataset(data: &Dataset, arch: &ArchSpec) -> Result<()> {
    if data.is_empty() {
        return arg_err("cannot train on an empty dataset");
    }
    if data.input_dim() != arch.input_dim {
        return arg_err(format!(
            "dataset has {} features, architecture expects {}",
            data.input_dim(),
            arch.input_dim
        ));
    }
    if let Some(&bad) = data.labels().iter().find(|&&y| y >= arch.num_classes) {
        return arg_err(format!("label {bad} out of range for {} classes", arch.num_classes));
    }
    Ok(())
}

/// Minibatch SGD with softmax cross-entropy. `make_batch` turns the sampled
/// indices into the actual batch (plain training copies the rows).
pub(crate) fn sgd<F>(
    model: &mut MlpModel,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut make_batch: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&MlpModel, &[usize], &mut Rng) -> Result<Batch>,
{
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch = make_batch(model, idx, rng)?;
            epoch_loss += step(model, &batch, cfg, rng);
            batches += 1;
        }
        let mean = epoch_loss / batches as f64;
        tracing::debug!(epoch, loss = mean, "epoch finished");
        losses.push(mean);
    }
    Ok(losses)
}

fn step(model: &mut MlpModel, batch: &Batch, cfg: &TrainConfig, rng: &mut Rng) -> f64 {
    let dropout = (cfg.dropout_rate > 0.0).then_some((rng, cfg.dropout_rate));
    let trace = model.trace(&batch.inputs, dropout);
    let logits = trace.logits();
    let c = logits.cols();
    let mut dlogits = Mat::zeros(batch.inputs.rows(), c);
    let mut loss = 0.0;
    for (r, (&y, &w)) in batch.labels.iter().zip(&batch.weights).enumerate() {
        let p = crate::oracle::ProbVector::softmax(logits.row(r));
        loss -= w * p.get(y).max(PROB_FLOOR).ln();
        let row = dlogits.row_mut(r);
        for (k, (g, pk)) in row.iter_mut().zip(p.as_slice()).enumerate() {
            *g = w * (pk - if k == y { 1.0 } else { 0.0 });
        }
    }
    let (grads, _) = model.backprop(&trace, dlogits, true);
    let lr = cfg.learning_rate;
    for (layer, g) in model.layers_mut().iter_mut().zip(grads) {
        layer
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(g.weights.as_slice())
            .for_each(|(w, d)| *w -= lr * d);
        layer.biases.iter_mut().zip(&g.biases).for_each(|(b, d)| *b -= lr * d);
    }
    loss
}

pub(crate) fn report(
    model: &MlpModel,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    epoch_losses: Vec<f64>,
) -> Result<TrainReport> {
    let train_accuracy = model.accuracy(train_set.features(), train_set.labels())?;
    let test_accuracy = match test_set {
        Some(t) if !t.is_empty() => Some(model.accuracy(t.features(), t.labels())?),
        _ => None,
    };
    Ok(TrainReport {
        epoch_losses,
        train_accuracy,
        test_accuracy,
    })
}

/// Trains a fresh model with plain minibatch SGD on the cross-entropy loss.
///
/// Deterministic given `cfg.seed`: the same seed initialises the weights and
/// drives the shuffles.
pub fn train(
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    arch: &ArchSpec,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    check_dataset(train_set, arch)?;
    let mut rng = Rng::seeded(cfg.seed);
    let mut model = MlpModel::init(arch, &mut rng)?;
    let losses = sgd(&mut model, train_set, cfg, &mut rng, |_, idx, _| {
        let w = 1.0 / idx.len() as f64;
        Ok(Batch {
            inputs: gather_rows(train_set, idx),
            labels: idx.iter().map(|&i| train_set.labels()[i]).collect(),
            weights: vec![w; idx.len()],
        })
    })?;
    let report = report(&model, train_set, test_set, losses)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth_blobs;

    fn arch(d: usize, c: usize) -> ArchSpec {
        ArchSpec {
            input_dim: d,
            hidden: vec![16],
            num_classes: c,
            data_range: (0.0, 1.0),
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = synth_blobs(4, 400, 2, 2, 0.05).unwrap();
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 16,
            learning_rate: 0.5,
            seed: 3,
            dropout_rate: 0.0,
        };
        let (_, report) = train(&data, None, &arch(2, 2), &cfg).unwrap();
        assert!(report.train_accuracy >= 0.99, "{report:?}");
    }

    #[test]
    fn zero_epochs_returns_the_initial_model() {
        let data = synth_blobs(1, 50, 3, 2, 0.1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            seed: 8,
            ..TrainConfig::default()
        };
        let (model, _) = train(&data, None, &arch(3, 2), &cfg).unwrap();
        let init = MlpModel::init(&arch(3, 2), &mut Rng::seeded(8)).unwrap();
        assert_eq!(model, init);
    }

    #[test]
    fn training_is_reproducible() {
        let data = synth_blobs(4, 120, 5, 3, 0.2).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 10,
            seed: 21,
            dropout_rate: 0.3,
            ..TrainConfig::default()
        };
        let (a, _) = train(&data, None, &arch(5, 3), &cfg).unwrap();
        let (b, _) = train(&data, None, &arch(5, 3), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_empty_or_mislabelled_data() {
        let data = synth_blobs(1, 20, 2, 3, 0.1).unwrap();
        let cfg = TrainConfig::default();
        assert!(train(&data, None, &arch(2, 2), &cfg).is_err());
        let empty = data.subset(&[]).unwrap();
        assert!(train(&empty, None, &arch(2, 3), &cfg).is_err());
        let bad = TrainConfig { batch_size: 0, ..cfg };
        assert!(train(&data, None, &arch(2, 3), &bad).is_err());
    }
}
