use crate::error::Result;
use crate::model::MlpModel;

use super::{AttackConfig, AttackResult};

/// Single-step fast gradient sign attack with full gradient access.
pub fn fgs_whitebox(model: &MlpModel, x: &[f64], config: &AttackConfig) -> Result<AttackResult> {
    config.budget.validate()?;
    config.budget.check_point(x)?;
    let direction = model.ascent_gradient(x, &config.loss)?;
    let x_adv = config.budget.signed_step(x, x, &direction, config.budget.epsilon);
    let predicted = model.predict(&x_adv)?;
    Ok(AttackResult::new(x, x_adv, predicted, &config.loss, 0))
}

/// Iterative FGS: `t` projected steps of size `α`.
pub fn ifgs_whitebox(model: &MlpModel, x: &[f64], config: &AttackConfig) -> Result<AttackResult> {
    config.budget.validate()?;
    config.validate_iterative()?;
    config.budget.check_point(x)?;
    let mut cur = x.to_vec();
    for _ in 0..config.iterations {
        let direction = model.ascent_gradient(&cur, &config.loss)?;
        cur = config.budget.signed_step(x, &cur, &direction, config.alpha);
    }
    let predicted = model.predict(&cur)?;
    Ok(AttackResult::new(x, cur, predicted, &config.loss, 0))
}
