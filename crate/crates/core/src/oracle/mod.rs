//! The black-box boundary.
//!
//! Everything an attack learns about a classifier flows through
//! [`Oracle::query_probs`]. Adapters exist for an in-process [`MlpModel`]
//! ([`LocalOracle`]) and for a remote HTTP service ([`RemoteOracle`]);
//! [`CountingOracle`] wraps either and keeps the query ledger.

mod counting;
mod remote;
mod server;
pub mod wire;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use counting::{with_counter, CountingOracle, QueryLedger};
pub use remote::{remote_classify, OracleEndpoint, RemoteOracle};
pub use server::{serve_mock, FaultPlan, MockServerConfig, MockServerHandle};

use crate::error::{arg_err, Result};
use crate::model::MlpModel;
use crate::numerics::Mat;

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Classifier output probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates that entries lie in `[0, 1]` and sum to 1 within 1e-6.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return arg_err("probability vector is empty");
        }
        if let Some(i) = entries.iter().position(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return arg_err(format!("probability entry {i} = {} is outside [0, 1]", entries[i]));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return arg_err(format!("probabilities sum to {sum}, not 1"));
        }
        Ok(Self(entries))
    }

    /// Numerically stable softmax of raw logits.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Predicted class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Classifier logits. When recovered from probabilities they are only
/// defined up to an additive constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return arg_err("logit vector is empty");
        }
        crate::numerics::ensure_finite(&entries, "logit vector")?;
        Ok(Self(entries))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Largest logit among classes other than `excluded` (lowest index on ties).
    pub fn argmax_excluding(&self, excluded: usize) -> usize {
        let mut best = usize::MAX;
        for (i, &v) in self.0.iter().enumerate() {
            if i != excluded && (best == usize::MAX || v > self.0[best]) {
                best = i;
            }
        }
        best
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Logits up to an additive constant: `ln(max(p_i, 1e-12))`.
pub fn recover_logits(p: &ProbVector) -> LogitVector {
    LogitVector(p.0.iter().map(|&pi| pi.max(PROB_FLOOR).ln()).collect())
}

/// A probability-returning classifier.
pub trait Oracle: Send + Sync {
    fn input_dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    fn query_probs(&self, x: &[f64]) -> Result<ProbVector>;

    /// One query per row, results in row order.
    fn query_batch(&self, xs: &Mat) -> Result<Vec<ProbVector>> {
        (0..xs.rows()).map(|i| self.query_probs(xs.row(i))).collect()
    }
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn query_probs(&self, x: &[f64]) -> Result<ProbVector> {
        (**self).query_probs(x)
    }
    fn query_batch(&self, xs: &Mat) -> Result<Vec<ProbVector>> {
        (**self).query_batch(xs)
    }
}

impl<O: Oracle + ?Sized> Oracle for Arc<O> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn query_probs(&self, x: &[f64]) -> Result<ProbVector> {
        (**self).query_probs(x)
    }
    fn query_batch(&self, xs: &Mat) -> Result<Vec<ProbVector>> {
        (**self).query_batch(xs)
    }
}

impl<O: Oracle + ?Sized> Oracle for Box<O> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn query_probs(&self, x: &[f64]) -> Result<ProbVector> {
        (**self).query_probs(x)
    }
    fn query_batch(&self, xs: &Mat) -> Result<Vec<ProbVector>> {
        (**self).query_batch(xs)
    }
}

/// In-process adapter exposing only the probabilities of an [`MlpModel`].
#[derive(Debug, Clone)]
pub struct LocalOracle {
    model: Arc<MlpModel>,
}

impl LocalOracle {
    pub fn new(model: Arc<MlpModel>) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }
}

impl Oracle for LocalOracle {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    fn query_probs(&self, x: &[f64]) -> Result<ProbVector> {
        Ok(self.model.forward(x)?.probs)
    }

    fn query_batch(&self, xs: &Mat) -> Result<Vec<ProbVector>> {
        Ok(self.model.forward_batch(xs)?.probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovered_logit_differences() {
        let p = ProbVector::new(vec![0.7, 0.2, 0.1]).unwrap();
        let phi = recover_logits(&p);
        assert!((phi.get(0) - phi.get(1) - 1.252763).abs() < 1e-6);
        assert!((phi.get(0) - phi.get(1) - (3.5f64).ln()).abs() < 1e-15);
        let back = ProbVector::softmax(phi.as_slice());
        for (a, b) in back.as_slice().iter().zip(p.as_slice()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn uniform_probabilities_give_equal_logits() {
        let phi = recover_logits(&ProbVector::new(vec![0.25; 4]).unwrap());
        assert!(phi.as_slice().iter().all(|&v| v == phi.get(0)));
    }

    #[test]
    fn zero_probability_is_floored() {
        let phi = recover_logits(&ProbVector::new(vec![1.0, 0.0]).unwrap());
        assert_eq!(phi.get(1), PROB_FLOOR.ln());
        assert!(phi.get(1).is_finite());
    }

    #[test]
    fn logit_differences_ignore_score_scale() {
        let raw = [3.0, 1.5, 0.5];
        for scale in [1.0, 0.01, 7.5] {
            let scores: Vec<f64> = raw.iter().map(|v| v * scale).collect();
            let total: f64 = scores.iter().sum();
            let p = ProbVector::new(scores.iter().map(|s| s / total).collect()).unwrap();
            let phi = recover_logits(&p);
            assert!((phi.get(0) - phi.get(1) - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = ProbVector::softmax(&[1000.0, 0.0]);
        assert_eq!(p.as_slice(), &[1.0, 0.0]);
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let phi = LogitVector::new(vec![2.0, 5.0, 5.0, 1.0]).unwrap();
        assert_eq!(phi.argmax(), 1);
        assert_eq!(phi.argmax_excluding(1), 2);
        assert_eq!(phi.argmax_excluding(0), 1);
    }
}
