//! Black-box adversarial example generation for probability-returning
//! classifiers.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices, finite-difference estimators, PCA, seeded RNG
//! - [`model`]: small feed-forward softmax classifiers, training and adversarial training
//! - [`oracle`]: the query boundary (local adapter, counting wrapper, HTTP client and mock server)
//! - [`losses`]: cross-entropy and logit-margin losses and the attack objectives built on them
//! - [`query_reduction`]: random-grouping and PCA-directional gradient estimators
//! - [`attacks`]: baselines, white-box FGS/IFGS, gradient-estimation attacks, SPSA, transfer
//! - [`harness`]: datasets, metrics, experiment runner and reports

// `!(a < b)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod error;
pub mod harness;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod query_reduction;

pub use error::{Error, Result};
