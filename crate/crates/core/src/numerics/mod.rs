//! Dense linear algebra, finite-difference estimation, PCA and the seeded
//! random number generator shared by every other module.

pub(crate) mod fd;
mod linalg;
mod pca;
mod rng;

pub use fd::{directional_fd, two_sided_fd, Objective};
pub use linalg::{dot, l2_norm, linf_norm, sign, Mat};
pub use pca::{pca_fit, PcaBasis};
pub use rng::Rng;

use crate::error::{arg_err, Result};

/// Rejects vectors containing NaN or infinities.
pub fn ensure_finite(v: &[f64], what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => arg_err(format!("{what} has a non-finite entry at index {i}")),
        None => Ok(()),
    }
}
