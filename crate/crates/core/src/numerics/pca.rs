use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

use super::linalg::Mat;

/// Top-k principal components of a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    /// d×k, orthonormal columns.
    pub components: Mat,
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.components.rows()
    }

    pub fn k(&self) -> usize {
        self.components.cols()
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.components.column(i)
    }

    /// Keeps only the leading `k` components.
    pub fn truncated(&self, k: usize) -> Result<PcaBasis> {
        if k == 0 || k > self.k() {
            return arg_err(format!("cannot truncate a {}-component basis to {k}", self.k()));
        }
        let cols: Vec<Vec<f64>> = (0..k).map(|i| self.component(i)).collect();
        Ok(PcaBasis {
            components: Mat::from_columns(&cols)?,
            eigenvalues: self.eigenvalues[..k].to_vec(),
        })
    }
}

/// Sample covariance `XXᵀ/(n-1)` of centered column samples (d×n input).
pub fn covariance(data: &Mat) -> Mat {
    let (d, n) = (data.rows(), data.cols());
    let mut centered = data.clone();
    for i in 0..d {
        let row = centered.row_mut(i);
        let mean = row.iter().sum::<f64>() / n as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    let mut c = centered.gemm(false, &centered, true);
    let scale = 1.0 / (n as f64 - 1.0);
    c.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
    // exact symmetry
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = avg;
            c[(j, i)] = avg;
        }
    }
    c
}

/// Fits the top-`k` principal components of `data`, whose columns are the
/// `n` samples in `d` dimensions.
///
/// Components are sign-normalised so that each column's largest-magnitude
/// entry is positive; round-off negative eigenvalues are clamped to zero.
pub fn pca_fit(data: &Mat, k: usize) -> Result<PcaBasis> {
    let (d, n) = (data.rows(), data.cols());
    if n < 2 {
        return arg_err(format!("PCA needs at least 2 samples, got {n}"));
    }
    if k == 0 || k > d.min(n) {
        return arg_err(format!("k={k} is outside 1..={}", d.min(n)));
    }
    let cov = covariance(data);
    let sym = DMatrix::from_row_slice(d, d, cov.as_slice());
    let max_iter = 10 * d * d;
    let eig = sym
        .try_symmetric_eigen(f64::EPSILON, max_iter)
        .ok_or_else(|| Error::Numeric(format!("eigensolver did not converge within {max_iter} iterations")))?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut columns = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut u: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let norm = super::l2_norm(&u);
        u.iter_mut().for_each(|v| *v /= norm);
        let pivot = u
            .iter()
            .enumerate()
            .fold(
                (0usize, 0.0f64),
                |best, (i, v)| {
                    if v.abs() > best.1 {
                        (i, v.abs())
                    } else {
                        best
                    }
                },
            )
            .0;
        if u[pivot] < 0.0 {
            u.iter_mut().for_each(|v| *v = -*v);
        }
        columns.push(u);
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaBasis {
        components: Mat::from_columns(&columns)?,
        eigenvalues,
    })
}
