//! Cross-entropy and logit-margin losses, in probability-only (oracle) and
//! white-box forms, plus the scalar attack objectives handed to the
//! gradient estimators.
//!
//! Every attack objective `g` comes with an ascent sign `s` such that moving
//! along `s·∇g` advances the adversary's goal:
//!
//! | loss  | mode       | objective `g`                  | `s`  |
//! |-------|------------|--------------------------------|------|
//! | xent  | untargeted | `p_y`                          | `-1` |
//! | xent  | targeted   | `p_T`                          | `+1` |
//! | logit | untargeted | `φ_y' - φ_y`                   | `+1` |
//! | logit | targeted   | `max_{i≠T} φ_i - φ_T`          | `-1` |
//!
//! For the cross-entropy rows `∇ℓ = -∇p_y / p_y`, so dividing the estimate
//! by the (positive) probability never changes its sign and costs no query.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::numerics::{Mat, Objective};
use crate::oracle::{recover_logits, LogitVector, Oracle, ProbVector, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Xent,
    Logit,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Xent => "xent",
            LossKind::Logit => "logit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    /// Push the prediction away from the true `label`.
    Untargeted { label: usize },
    /// Push the prediction onto `target`.
    Targeted { target: usize },
}

impl AttackMode {
    pub fn class(self) -> usize {
        match self {
            AttackMode::Untargeted { label } => label,
            AttackMode::Targeted { target } => target,
        }
    }

    pub fn is_targeted(self) -> bool {
        matches!(self, AttackMode::Targeted { .. })
    }

    /// Whether `predicted` meets the adversary's goal.
    pub fn is_success(self, predicted: usize) -> bool {
        match self {
            AttackMode::Untargeted { label } => predicted != label,
            AttackMode::Targeted { target } => predicted == target,
        }
    }

    pub fn name(self) -> &'static str {
        if self.is_targeted() {
            "targeted"
        } else {
            "untargeted"
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub mode: AttackMode,
    /// Confidence margin of the untargeted logit loss.
    pub kappa: f64,
    /// Keep the runner-up class `y'` fixed instead of re-resolving it at
    /// every evaluation point (untargeted logit only; ablation).
    pub frozen_runner_up: Option<usize>,
}

impl LossSpec {
    pub fn new(kind: LossKind, mode: AttackMode) -> Self {
        Self {
            kind,
            mode,
            kappa: 0.0,
            frozen_runner_up: None,
        }
    }

    pub fn xent(mode: AttackMode) -> Self {
        Self::new(LossKind::Xent, mode)
    }

    pub fn logit(mode: AttackMode) -> Self {
        Self::new(LossKind::Logit, mode)
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if num_classes < 2 {
            return arg_err(format!("losses need at least 2 classes, got {num_classes}"));
        }
        if self.mode.class() >= num_classes {
            return arg_err(format!(
                "class index {} out of range for {num_classes} classes",
                self.mode.class()
            ));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return arg_err(format!("kappa must be a non-negative real, got {}", self.kappa));
        }
        if let Some(r) = self.frozen_runner_up {
            if r >= num_classes || r == self.mode.class() {
                return arg_err(format!("invalid frozen runner-up class {r}"));
            }
        }
        Ok(())
    }

    /// Sign `s` such that `s·∇g` is the adversary's ascent direction.
    pub fn ascent_sign(&self) -> f64 {
        match (self.kind, self.mode) {
            (LossKind::Xent, AttackMode::Untargeted { .. }) => -1.0,
            (LossKind::Xent, AttackMode::Targeted { .. }) => 1.0,
            (LossKind::Logit, AttackMode::Untargeted { .. }) => 1.0,
            (LossKind::Logit, AttackMode::Targeted { .. }) => -1.0,
        }
    }

    fn runner_up(&self, logits: &[f64], label: usize) -> usize {
        self.frozen_runner_up.unwrap_or_else(|| argmax_excluding(logits, label))
    }

    /// Value of the attack objective `g` given one classifier output.
    pub fn objective_value(&self, probs: &ProbVector) -> f64 {
        match (self.kind, self.mode) {
            (LossKind::Xent, mode) => probs.get(mode.class()),
            (LossKind::Logit, AttackMode::Untargeted { label }) => {
                let phi = recover_logits(probs);
                let y2 = self.runner_up(phi.as_slice(), label);
                phi.get(y2) - phi.get(label)
            }
            (LossKind::Logit, AttackMode::Targeted { target }) => {
                let phi = recover_logits(probs);
                phi.get(phi.argmax_excluding(target)) - phi.get(target)
            }
        }
    }

    /// Gradient, with respect to the logits, of the loss `ℓ` itself:
    /// `-log p_c` for xent; the clamped margin (untargeted) or the targeted
    /// drive term for logit.
    pub fn loss_logit_gradient(&self, logits: &[f64], probs: &[f64]) -> Vec<f64> {
        let c = logits.len();
        let mut g = vec![0.0; c];
        match (self.kind, self.mode) {
            (LossKind::Xent, mode) => {
                g.copy_from_slice(probs);
                g[mode.class()] -= 1.0;
            }
            (LossKind::Logit, AttackMode::Untargeted { label }) => {
                let y2 = self.runner_up(logits, label);
                if logits[label] - logits[y2] >= -self.kappa {
                    g[label] += 1.0;
                    g[y2] -= 1.0;
                }
            }
            (LossKind::Logit, AttackMode::Targeted { target }) => {
                let other = argmax_excluding(logits, target);
                g[other] += 1.0;
                g[target] -= 1.0;
            }
        }
        g
    }

    /// Gradient, with respect to the true logits, of the quantity whose
    /// increase advances the attack. White-box attacks step along the sign
    /// of its input gradient; for logit losses it is `s·∇g` exactly, for
    /// xent it is the matching log-probability gradient.
    pub fn ascent_logit_gradient(&self, logits: &[f64], probs: &[f64]) -> Vec<f64> {
        let c = logits.len();
        let mut g = vec![0.0; c];
        match (self.kind, self.mode) {
            (LossKind::Xent, AttackMode::Untargeted { label }) => {
                g.copy_from_slice(probs);
                g[label] -= 1.0;
            }
            (LossKind::Xent, AttackMode::Targeted { target }) => {
                g.iter_mut().zip(probs).for_each(|(gi, p)| *gi = -p);
                g[target] += 1.0;
            }
            (LossKind::Logit, AttackMode::Untargeted { label }) => {
                let y2 = self.runner_up(logits, label);
                g[y2] += 1.0;
                g[label] -= 1.0;
            }
            (LossKind::Logit, AttackMode::Targeted { target }) => {
                let other = argmax_excluding(logits, target);
                g[target] += 1.0;
                g[other] -= 1.0;
            }
        }
        g
    }
}

fn argmax_excluding(v: &[f64], excluded: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &x) in v.iter().enumerate() {
        if i != excluded && (best == usize::MAX || x > v[best]) {
            best = i;
        }
    }
    best
}

/// `-log(max(p_y, 1e-12))`.
pub fn xent_from_probs(p: &ProbVector, y: usize) -> f64 {
    -p.get(y).max(PROB_FLOOR).ln()
}

/// Logit loss: untargeted `max(φ_y - max_{i≠y} φ_i, -κ)`; targeted
/// `max_{i≠T} φ_i - φ_T`.
pub fn logit_loss(phi: &LogitVector, spec: &LossSpec) -> Result<f64> {
    spec.validate(phi.len())?;
    Ok(match spec.mode {
        AttackMode::Untargeted { label } => {
            let y2 = spec.runner_up(phi.as_slice(), label);
            (phi.get(label) - phi.get(y2)).max(-spec.kappa)
        }
        AttackMode::Targeted { target } => phi.get(phi.argmax_excluding(target)) - phi.get(target),
    })
}

/// The scalar function `g` an estimator differentiates; each evaluation
/// costs exactly one oracle query.
pub struct AttackObjective<'a, O: ?Sized> {
    oracle: &'a O,
    spec: LossSpec,
}

/// Builds the attack objective for `spec` over `oracle`.
pub fn attack_objective<O: Oracle + ?Sized>(oracle: &O, spec: LossSpec) -> Result<AttackObjective<'_, O>> {
    spec.validate(oracle.num_classes())?;
    Ok(AttackObjective { oracle, spec })
}

impl<O: Oracle + ?Sized> AttackObjective<'_, O> {
    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }
}

impl<O: Oracle + ?Sized> Objective for AttackObjective<'_, O> {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        let p = self.oracle.query_probs(x)?;
        Ok(self.spec.objective_value(&p))
    }

    fn eval_rows(&self, points: &Mat) -> Result<Vec<f64>> {
        let probs = self.oracle.query_batch(points)?;
        if probs.len() != points.rows() {
            return Err(Error::Protocol(format!(
                "oracle answered {} of {} queries",
                probs.len(),
                points.rows()
            )));
        }
        Ok(probs.iter().map(|p| self.spec.objective_value(p)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MlpModel;
    use crate::oracle::{with_counter, LocalOracle};
    use std::sync::Arc;

    fn p(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn untargeted(label: usize) -> AttackMode {
        AttackMode::Untargeted { label }
    }

    #[test]
    fn xent_values() {
        assert_eq!(xent_from_probs(&p(&[1.0, 0.0]), 0), 0.0);
        let e_inv = (-1.0f64).exp();
        assert!((xent_from_probs(&p(&[e_inv, 1.0 - e_inv]), 0) - 1.0).abs() < 1e-15);
        assert!((xent_from_probs(&p(&[0.7, 0.2, 0.1]), 0) - 0.356675).abs() < 1e-6);
        assert!(xent_from_probs(&p(&[1.0, 0.0]), 1).is_finite());
    }

    #[test]
    fn logit_loss_values() {
        let spec = LossSpec::logit(untargeted(0));
        let phi = LogitVector::new(vec![2.0, 5.0, 1.0]).unwrap();
        assert_eq!(logit_loss(&phi, &spec).unwrap(), 0.0);
        let phi = LogitVector::new(vec![5.0, 2.0, 1.0]).unwrap();
        assert_eq!(logit_loss(&phi, &spec).unwrap(), 3.0);
        let phi = recover_logits(&p(&[0.7, 0.2, 0.1]));
        assert!((logit_loss(&phi, &spec).unwrap() - 1.252763).abs() < 1e-6);

        let one = LogitVector::new(vec![1.0]).unwrap();
        assert!(logit_loss(&one, &spec).is_err());
    }

    #[test]
    fn kappa_clamps_from_below() {
        let spec = LossSpec {
            kappa: 1.5,
            ..LossSpec::logit(untargeted(0))
        };
        let phi = LogitVector::new(vec![0.0, 4.0]).unwrap();
        assert_eq!(logit_loss(&phi, &spec).unwrap(), -1.5);
    }

    #[test]
    fn objective_values_from_probabilities() {
        let probs = p(&[0.5, 0.3, 0.2]);
        assert_eq!(LossSpec::xent(untargeted(0)).objective_value(&probs), 0.5);
        let probs = p(&[0.7, 0.2, 0.1]);
        let g = LossSpec::logit(untargeted(0)).objective_value(&probs);
        assert!((g + 1.252763).abs() < 1e-6);
        // target is already the argmax: negative margin
        let t = LossSpec::logit(AttackMode::Targeted { target: 0 }).objective_value(&probs);
        assert!(t < 0.0);
    }

    #[test]
    fn untargeted_logit_drive_is_antisymmetric_in_two_classes() {
        let probs = p(&[0.8, 0.2]);
        let a = LossSpec::logit(untargeted(0)).objective_value(&probs);
        let b = LossSpec::logit(untargeted(1)).objective_value(&probs);
        assert!((a + b).abs() < 1e-15);
    }

    #[test]
    fn recovered_and_true_logits_give_the_same_loss() {
        let model = MlpModel::linear(
            crate::numerics::Mat::new(3, 2, vec![1.0, -2.0, 0.5, 0.25, -1.0, 3.0]).unwrap(),
            vec![0.1, -0.2, 0.3],
            (0.0, 1.0),
        )
        .unwrap();
        for x in [[0.2, 0.9], [0.7, 0.1], [0.5, 0.5]] {
            let out = model.forward(&x).unwrap();
            let recovered = recover_logits(&out.probs);
            for mode in [untargeted(0), untargeted(2), AttackMode::Targeted { target: 1 }] {
                let spec = LossSpec::logit(mode);
                let a = logit_loss(&out.logits, &spec).unwrap();
                let b = logit_loss(&recovered, &spec).unwrap();
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn objective_costs_one_query_per_evaluation() {
        let model = Arc::new(MlpModel::zeros_linear(4, 3, (0.0, 1.0)));
        let (oracle, ledger) = with_counter(LocalOracle::new(model));
        let g = attack_objective(&oracle, LossSpec::logit(untargeted(1))).unwrap();
        g.eval(&[0.0; 4]).unwrap();
        assert_eq!(ledger.total(), 1);
        g.eval_rows(&Mat::zeros(5, 4)).unwrap();
        assert_eq!(ledger.total(), 6);
        assert!(attack_objective(&oracle, LossSpec::logit(untargeted(3))).is_err());
    }
}
