use std::sync::Arc;

use crate::error::{arg_err, Result};
use crate::model::MlpModel;
use crate::oracle::Oracle;

use super::{AttackConfig, AttackResult};

/// A local model used to craft transferable samples, with its weight in the
/// ensemble loss.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub model: Arc<MlpModel>,
    pub weight: f64,
}

impl Surrogate {
    pub fn new(model: Arc<MlpModel>, weight: f64) -> Self {
        Self { model, weight }
    }

    /// Equal weights `1/m` over `models`.
    pub fn uniform(models: &[Arc<MlpModel>]) -> Vec<Self> {
        let w = 1.0 / models.len() as f64;
        models.iter().map(|m| Self::new(m.clone(), w)).collect()
    }
}

fn ensemble_gradient(surrogates: &[Surrogate], x: &[f64], config: &AttackConfig) -> Result<Vec<f64>> {
    let mut total = vec![0.0; x.len()];
    for s in surrogates {
        let g = s.model.ascent_gradient(x, &config.loss)?;
        for (t, gi) in total.iter_mut().zip(&g) {
            *t += s.weight * gi;
        }
    }
    Ok(total)
}

/// Crafts a sample on the surrogate ensemble with FGS (or IFGS when
/// `iterative`), then checks it against the target with exactly one query.
pub fn transfer_attack<O: Oracle + ?Sized>(
    surrogates: &[Surrogate],
    target: &O,
    x: &[f64],
    config: &AttackConfig,
    iterative: bool,
) -> Result<AttackResult> {
    if surrogates.is_empty() {
        return arg_err("transfer attack needs at least one surrogate");
    }
    if let Some(s) = surrogates.iter().find(|s| !(s.weight.is_finite() && s.weight >= 0.0)) {
        return arg_err(format!("surrogate weight must be non-negative, got {}", s.weight));
    }
    if x.len() != target.input_dim() {
        return arg_err(format!(
            "input has {} features, target expects {}",
            x.len(),
            target.input_dim()
        ));
    }
    config.budget.validate()?;
    config.budget.check_point(x)?;
    let x_adv = if iterative {
        config.validate_iterative()?;
        let mut cur = x.to_vec();
        for _ in 0..config.iterations {
            let direction = ensemble_gradient(surrogates, &cur, config)?;
            cur = config.budget.signed_step(x, &cur, &direction, config.alpha);
        }
        cur
    } else {
        let direction = ensemble_gradient(surrogates, x, config)?;
        config.budget.signed_step(x, x, &direction, config.budget.epsilon)
    };
    let predicted = target.query_probs(&x_adv)?.argmax();
    Ok(AttackResult::new(x, x_adv, predicted, &config.loss, 1))
}
