use std::sync::Arc;

use crate::error::{arg_err, Result};
use crate::harness::Dataset;
use crate::numerics::{sign, Mat, Rng};
use crate::oracle::ProbVector;

use super::train::{check_dataset, gather_rows, report, sgd, Batch};
use super::{ArchSpec, MlpModel, TrainConfig, TrainReport};

/// Where the adversarial half of each minibatch comes from.
#[derive(Debug, Clone)]
pub enum AdvVariant {
    /// FGS samples regenerated against the current model every batch.
    StandardFgs,
    /// FGS samples pre-generated on fixed source models; one source is drawn
    /// uniformly per batch.
    Ensemble { sources: Vec<Arc<MlpModel>> },
    /// Iterative FGS against the current model.
    IterativeIfgs { iterations: usize, step: f64 },
}

#[derive(Debug, Clone)]
pub struct AdvTrainKind {
    pub variant: AdvVariant,
    /// L∞ budget of the training perturbations.
    pub epsilon: f64,
    /// Weight of the benign half of the loss.
    pub mix: f64,
}

impl AdvTrainKind {
    pub fn standard(epsilon: f64) -> Self {
        Self {
            variant: AdvVariant::StandardFgs,
            epsilon,
            mix: 0.5,
        }
    }

    fn validate(&self, arch: &ArchSpec) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return arg_err(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return arg_err(format!("mix must lie in [0, 1], got {}", self.mix));
        }
        match &self.variant {
            AdvVariant::StandardFgs => {}
            AdvVariant::Ensemble { sources } => {
                if sources.is_empty() {
                    return arg_err("ensemble adversarial training needs at least one source model");
                }
                for s in sources {
                    if s.input_dim() != arch.input_dim || s.num_classes() != arch.num_classes {
                        return arg_err("ensemble source model shape does not match the architecture");
                    }
                }
            }
            AdvVariant::IterativeIfgs { iterations, step } => {
                if *iterations == 0 || !(*step > 0.0) {
                    return arg_err("iterative adversarial training needs iterations >= 1 and step > 0");
                }
            }
        }
        Ok(())
    }
}

/// Row-wise input gradient of the cross-entropy loss at the true labels.
fn xent_input_grads(model: &MlpModel, xs: &Mat, labels: &[usize]) -> Mat {
    let trace = model.trace(xs, None);
    let logits = trace.logits();
    let mut dlogits = Mat::zeros(xs.rows(), logits.cols());
    for (r, &y) in labels.iter().enumerate() {
        let p = ProbVector::softmax(logits.row(r));
        let row = dlogits.row_mut(r);
        row.copy_from_slice(p.as_slice());
        row[y] -= 1.0;
    }
    model.backprop(&trace, dlogits, false).1
}

/// Untargeted cross-entropy FGS on every row, clipped to the data range.
pub fn fgs_batch(model: &MlpModel, xs: &Mat, labels: &[usize], epsilon: f64) -> Mat {
    let (lo, hi) = model.data_range();
    let grads = xent_input_grads(model, xs, labels);
    let mut out = xs.clone();
    out.as_mut_slice()
        .iter_mut()
        .zip(grads.as_slice())
        .for_each(|(x, g)| *x = (*x + epsilon * sign(*g)).clamp(lo, hi));
    out
}

/// Untargeted cross-entropy IFGS on every row with projection onto the
/// ε-box intersected with the data range.
pub fn ifgs_batch(model: &MlpModel, xs: &Mat, labels: &[usize], epsilon: f64, step: f64, iterations: usize) -> Mat {
    let (lo, hi) = model.data_range();
    let mut cur = xs.clone();
    for _ in 0..iterations {
        let grads = xent_input_grads(model, &cur, labels);
        cur.as_mut_slice()
            .iter_mut()
            .zip(grads.as_slice())
            .zip(xs.as_slice())
            .for_each(|((x, g), x0)| {
                let lower = lo.max(x0 - epsilon);
                let upper = hi.min(x0 + epsilon);
                *x = (*x + step * sign(*g)).clamp(lower, upper);
            });
    }
    cur
}

/// Adversarial training: every minibatch keeps its first half benign and
/// replaces the second half with adversarial versions of those samples.
/// The benign half carries total loss weight `mix`, the adversarial half
/// `1 - mix`.
pub fn adversarial_train(
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    arch: &ArchSpec,
    cfg: &TrainConfig,
    kind: &AdvTrainKind,
) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    check_dataset(train_set, arch)?;
    kind.validate(arch)?;

    let pools: Vec<Mat> = match &kind.variant {
        AdvVariant::Ensemble { sources } => sources
            .iter()
            .map(|s| fgs_batch(s, train_set.features(), train_set.labels(), kind.epsilon))
            .collect(),
        _ => Vec::new(),
    };

    let mut rng = Rng::seeded(cfg.seed);
    let mut model = MlpModel::init(arch, &mut rng)?;
    let losses = sgd(&mut model, train_set, cfg, &mut rng, |current, idx, rng| {
        let b = idx.len();
        let n_adv = b / 2;
        let n_benign = b - n_adv;
        let mut inputs = gather_rows(train_set, idx);
        let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels()[i]).collect();

        if n_adv > 0 {
            let adv_idx = &idx[n_benign..];
            let adv_labels = &labels[n_benign..];
            let adv = match &kind.variant {
                AdvVariant::StandardFgs => {
                    fgs_batch(current, &gather_rows(train_set, adv_idx), adv_labels, kind.epsilon)
                }
                AdvVariant::IterativeIfgs { iterations, step } => ifgs_batch(
                    current,
                    &gather_rows(train_set, adv_idx),
                    adv_labels,
                    kind.epsilon,
                    *step,
                    *iterations,
                ),
                AdvVariant::Ensemble { .. } => {
                    let pool = &pools[rng.below(pools.len())];
                    let mut m = Mat::zeros(adv_idx.len(), train_set.input_dim());
                    for (r, &i) in adv_idx.iter().enumerate() {
                        m.row_mut(r).copy_from_slice(pool.row(i));
                    }
                    m
                }
            };
            for r in 0..n_adv {
                inputs.row_mut(n_benign + r).copy_from_slice(adv.row(r));
            }
        }

        let weights = if n_adv == 0 {
            vec![1.0 / n_benign as f64; b]
        } else {
            let wb = kind.mix / n_benign as f64;
            let wa = (1.0 - kind.mix) / n_adv as f64;
            (0..b).map(|r| if r < n_benign { wb } else { wa }).collect()
        };
        Ok(Batch {
            inputs,
            labels,
            weights,
        })
    })?;
    let report = report(&model, train_set, test_set, losses)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth_blobs;
    use crate::model::train;

    fn setup() -> (Dataset, ArchSpec, TrainConfig) {
        let data = synth_blobs(2, 160, 6, 3, 0.15).unwrap();
        let arch = ArchSpec {
            input_dim: 6,
            hidden: vec![12],
            num_classes: 3,
            data_range: (0.0, 1.0),
        };
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 16,
            learning_rate: 0.1,
            seed: 17,
            dropout_rate: 0.0,
        };
        (data, arch, cfg)
    }

    #[test]
    fn zero_epsilon_matches_plain_training() {
        let (data, arch, cfg) = setup();
        let (plain, _) = train(&data, None, &arch, &cfg).unwrap();
        let (adv, _) = adversarial_train(&data, None, &arch, &cfg, &AdvTrainKind::standard(0.0)).unwrap();
        assert_eq!(plain, adv);
    }

    #[test]
    fn single_iteration_ifgs_matches_standard() {
        let (data, arch, cfg) = setup();
        let eps = 0.2;
        let standard = adversarial_train(&data, None, &arch, &cfg, &AdvTrainKind::standard(eps))
            .unwrap()
            .0;
        let iterative = AdvTrainKind {
            variant: AdvVariant::IterativeIfgs {
                iterations: 1,
                step: eps,
            },
            epsilon: eps,
            mix: 0.5,
        };
        let iter = adversarial_train(&data, None, &arch, &cfg, &iterative).unwrap().0;
        assert_eq!(standard, iter);
    }

    #[test]
    fn ensemble_requires_sources() {
        let (data, arch, cfg) = setup();
        let kind = AdvTrainKind {
            variant: AdvVariant::Ensemble { sources: vec![] },
            epsilon: 0.1,
            mix: 0.5,
        };
        assert!(adversarial_train(&data, None, &arch, &cfg, &kind).is_err());

        let (src, _) = train(
            &data,
            None,
            &arch,
            &TrainConfig {
                seed: 99,
                ..cfg.clone()
            },
        )
        .unwrap();
        let kind = AdvTrainKind {
            variant: AdvVariant::Ensemble {
                sources: vec![Arc::new(src)],
            },
            epsilon: 0.1,
            mix: 0.5,
        };
        let longer = TrainConfig {
            epochs: 40,
            learning_rate: 0.3,
            ..cfg
        };
        let (_, report) = adversarial_train(&data, None, &arch, &longer, &kind).unwrap();
        assert!(report.train_accuracy > 0.9, "{report:?}");
    }

    #[test]
    fn ifgs_stays_in_the_box() {
        let (data, arch, cfg) = setup();
        let (model, _) = train(&data, None, &arch, &cfg).unwrap();
        let adv = ifgs_batch(&model, data.features(), data.labels(), 0.1, 0.03, 7);
        for (a, x) in adv.as_slice().iter().zip(data.features().as_slice()) {
            assert!((a - x).abs() <= 0.1 + 1e-12);
            assert!((0.0..=1.0).contains(a));
        }
    }
}
