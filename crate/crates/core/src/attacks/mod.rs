//! Attack procedures: zero-knowledge baselines, white-box FGS/IFGS, the
//! query-based gradient-estimation attacks (single-step, iterative,
//! query-reduced, random-start), SPSA and transferability.
//!
//! All attacks return x_adv inside the L∞ ball of radius ε around the
//! benign input, intersected with the data range.

mod baselines;
mod catalog;
mod estimation;
mod transfer;
mod whitebox;

use serde::{Deserialize, Serialize};

pub use baselines::{class_means, diff_of_means, random_perturbation};
pub use catalog::{catalog, display_name, AttackMethod, CatalogEntry, Knowledge};
pub use estimation::{fd_attack, ifd_attack, rand_init_then, spsa_attack};
pub use transfer::{transfer_attack, Surrogate};
pub use whitebox::{fgs_whitebox, ifgs_whitebox};

use crate::error::{arg_err, Result};
use crate::losses::{LossKind, LossSpec};
use crate::numerics::{l2_norm, linf_norm, sign};
use crate::query_reduction::Reduction;

/// Random-start magnitude used by default.
pub const RAND_INIT_DEFAULT: f64 = 0.05;
/// Alternative random-start magnitude preset.
pub const RAND_INIT_SMALL: f64 = 0.01;

/// L∞ radius and valid data range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackBudget {
    pub epsilon: f64,
    pub bounds: (f64, f64),
}

impl AttackBudget {
    pub fn new(epsilon: f64, bounds: (f64, f64)) -> Result<Self> {
        let b = Self { epsilon, bounds };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return arg_err(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if !(self.bounds.0 < self.bounds.1) {
            return arg_err(format!("invalid data bounds {:?}", self.bounds));
        }
        Ok(())
    }

    /// Rejects inputs that are not inside the data range.
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        let (lo, hi) = self.bounds;
        match x.iter().position(|v| !(lo..=hi).contains(v)) {
            Some(i) => arg_err(format!("feature {i} = {} lies outside [{lo}, {hi}]", x[i])),
            None => Ok(()),
        }
    }

    /// Clips `x` to `[max(lo, o_i - ε), min(hi, o_i + ε)]` coordinate-wise.
    pub fn project(&self, origin: &[f64], x: &mut [f64]) {
        let (lo, hi) = self.bounds;
        for (xi, &oi) in x.iter_mut().zip(origin) {
            let lower = lo.max(oi - self.epsilon);
            let upper = hi.min(oi + self.epsilon);
            *xi = xi.clamp(lower, upper);
        }
    }

    /// `Π(x + step·sign(direction))` around `origin`.
    pub fn signed_step(&self, origin: &[f64], x: &[f64], direction: &[f64], step: f64) -> Vec<f64> {
        let mut next: Vec<f64> = x.iter().zip(direction).map(|(xi, gi)| xi + step * sign(*gi)).collect();
        self.project(origin, &mut next);
        next
    }
}

/// Full description of one attack run on one sample.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub budget: AttackBudget,
    pub loss: LossSpec,
    /// Finite-difference step.
    pub delta: f64,
    /// Per-iteration step of iterative attacks.
    pub alpha: f64,
    pub iterations: usize,
    pub reduction: Reduction,
    pub init_rand_magnitude: f64,
    pub seed: u64,
    /// Freeze the runner-up class at the benign input (costs one query).
    pub freeze_runner_up: bool,
}

impl AttackConfig {
    /// Defaults: δ = 1.0 for xent and 0.01 for logit, α = 0.01, t = 40.
    pub fn new(budget: AttackBudget, loss: LossSpec) -> Self {
        Self {
            budget,
            loss,
            delta: default_delta(loss.kind),
            alpha: 0.01,
            iterations: 40,
            reduction: Reduction::None,
            init_rand_magnitude: 0.0,
            seed: 0,
            freeze_runner_up: false,
        }
    }

    pub(crate) fn validate_estimation(&self) -> Result<()> {
        self.budget.validate()?;
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return arg_err(format!("delta must be positive, got {}", self.delta));
        }
        if let Reduction::RandomGroups { k: 0, .. } = self.reduction {
            return arg_err("random grouping needs k >= 1");
        }
        Ok(())
    }

    pub(crate) fn validate_iterative(&self) -> Result<()> {
        if self.iterations == 0 {
            return arg_err("iterative attacks need at least one iteration");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return arg_err(format!("alpha must be positive, got {}", self.alpha));
        }
        Ok(())
    }
}

/// Default finite-difference step for each loss.
pub fn default_delta(kind: LossKind) -> f64 {
    match kind {
        LossKind::Xent => 1.0,
        LossKind::Logit => 0.01,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub x_adv: Vec<f64>,
    pub success: bool,
    pub predicted: usize,
    /// Oracle queries spent on this sample, verification included.
    pub queries: u64,
    pub l2_distortion: f64,
    pub linf_distortion: f64,
}

impl AttackResult {
    pub(crate) fn new(x: &[f64], x_adv: Vec<f64>, predicted: usize, loss: &LossSpec, queries: u64) -> Self {
        let diff: Vec<f64> = x_adv.iter().zip(x).map(|(a, b)| a - b).collect();
        Self {
            success: loss.mode.is_success(predicted),
            predicted,
            queries,
            l2_distortion: l2_norm(&diff),
            linf_distortion: linf_norm(&diff),
            x_adv,
        }
    }
}
