//! Query-reduced gradient estimators.
//!
//! Random grouping perturbs disjoint random feature groups together and
//! spreads each group's directional difference over its members, cutting
//! the cost from `2d` to `2⌈d/k⌉` queries. The PCA scheme estimates
//! directional derivatives along the leading principal components and sums
//! their projections, costing `2k` queries.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::numerics::fd::{central_quotient, symmetric_probes};
use crate::numerics::{l2_norm, two_sided_fd, Objective, PcaBasis, Rng};

/// Divisor used for the final, possibly short, random group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualDivisor {
    /// Divide by `2δk` for every group, including a short final group.
    #[default]
    GroupSize,
    /// Divide by `2δ|S|` using the actual size of the final group.
    ActualSize,
}

/// How the attack gradient is estimated.
#[derive(Debug, Clone, Default)]
pub enum Reduction {
    /// Coordinate-wise two-sided differences (`2d` queries).
    #[default]
    None,
    RandomGroups {
        k: usize,
        residual: ResidualDivisor,
    },
    Pca {
        basis: Arc<PcaBasis>,
    },
}

impl Reduction {
    pub fn random_groups(k: usize) -> Self {
        Reduction::RandomGroups {
            k,
            residual: ResidualDivisor::GroupSize,
        }
    }

    pub fn scheme(&self) -> Scheme {
        match self {
            Reduction::None => Scheme::None,
            Reduction::RandomGroups { k, .. } => Scheme::RandomGroups { k: *k },
            Reduction::Pca { basis } => Scheme::Pca { k: basis.k() },
        }
    }

    /// Queries spent by one estimate in `d` dimensions.
    pub fn queries_per_estimate(&self, d: usize) -> u64 {
        match self {
            Reduction::None => 2 * d as u64,
            Reduction::RandomGroups { k, .. } => 2 * d.div_ceil(*k) as u64,
            Reduction::Pca { basis } => 2 * basis.k() as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Scheme {
    None,
    RandomGroups { k: usize },
    Pca { k: usize },
}

impl Scheme {
    pub fn label(&self) -> String {
        match self {
            Scheme::None => "none".into(),
            Scheme::RandomGroups { k } => format!("RG-{k}"),
            Scheme::Pca { k } => format!("PCA-{k}"),
        }
    }

    pub fn k(&self) -> Option<usize> {
        match self {
            Scheme::None => None,
            Scheme::RandomGroups { k } | Scheme::Pca { k } => Some(*k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub entries: Vec<f64>,
    pub queries_used: u64,
    pub scheme: Scheme,
}

/// Random disjoint groups covering `0..d`, all of size `k` except possibly
/// the last.
pub fn random_groups(d: usize, k: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..d).collect();
    rng.shuffle(&mut perm);
    perm.chunks(k).map(|c| c.to_vec()).collect()
}

/// Random-grouping gradient estimate.
pub fn estimate_rg<G: Objective + ?Sized>(
    g: &G,
    x: &[f64],
    k: usize,
    delta: f64,
    rng: &mut Rng,
    residual: ResidualDivisor,
) -> Result<GradientEstimate> {
    let d = x.len();
    if k == 0 || k > d {
        return arg_err(format!("group size k={k} must lie in 1..={d}"));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return arg_err(format!("finite-difference step must be positive, got {delta}"));
    }
    let groups = random_groups(d, k, rng);
    let dirs: Vec<Vec<f64>> = groups
        .iter()
        .map(|s| {
            let mut v = vec![0.0; d];
            s.iter().for_each(|&j| v[j] = 1.0);
            v
        })
        .collect();
    let values = g.eval_rows(&symmetric_probes(x, &dirs, delta))?;
    let mut entries = vec![0.0; d];
    for (i, s) in groups.iter().enumerate() {
        let size = match residual {
            ResidualDivisor::GroupSize => k,
            ResidualDivisor::ActualSize => s.len(),
        };
        let q = central_quotient(values[2 * i], values[2 * i + 1], 2.0 * delta * size as f64, i)?;
        s.iter().for_each(|&j| entries[j] = q);
    }
    Ok(GradientEstimate {
        entries,
        queries_used: 2 * groups.len() as u64,
        scheme: Scheme::RandomGroups { k },
    })
}

/// PCA-directional gradient estimate: `Σ_i α_i v_i` with `v_i` the
/// normalised `i`-th component and `α_i` its two-sided directional
/// difference.
pub fn estimate_pca<G: Objective + ?Sized>(g: &G, x: &[f64], basis: &PcaBasis, delta: f64) -> Result<GradientEstimate> {
    let d = x.len();
    if basis.dim() != d {
        return arg_err(format!("basis has dimension {} but the point has {d}", basis.dim()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return arg_err(format!("finite-difference step must be positive, got {delta}"));
    }
    let dirs: Vec<Vec<f64>> = (0..basis.k())
        .map(|i| {
            let u = basis.component(i);
            let n = l2_norm(&u);
            u.into_iter().map(|v| v / n).collect()
        })
        .collect();
    let values = g.eval_rows(&symmetric_probes(x, &dirs, delta))?;
    let mut entries = vec![0.0; d];
    for (i, v) in dirs.iter().enumerate() {
        let alpha = central_quotient(values[2 * i], values[2 * i + 1], 2.0 * delta, i)?;
        entries.iter_mut().zip(v).for_each(|(e, vi)| *e += alpha * vi);
    }
    Ok(GradientEstimate {
        entries,
        queries_used: 2 * basis.k() as u64,
        scheme: Scheme::Pca { k: basis.k() },
    })
}

/// Dispatches on `reduction`.
pub fn estimate_gradient<G: Objective + ?Sized>(
    g: &G,
    x: &[f64],
    delta: f64,
    reduction: &Reduction,
    rng: &mut Rng,
) -> Result<GradientEstimate> {
    match reduction {
        Reduction::None => Ok(GradientEstimate {
            entries: two_sided_fd(g, x, delta)?,
            queries_used: 2 * x.len() as u64,
            scheme: Scheme::None,
        }),
        Reduction::RandomGroups { k, residual } => estimate_rg(g, x, *k, delta, rng, *residual),
        Reduction::Pca { basis } => estimate_pca(g, x, basis, delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, pca_fit, Mat};
    use std::cell::Cell;

    fn linear(w: Vec<f64>) -> impl Fn(&[f64]) -> Result<f64> {
        move |x: &[f64]| Ok(dot(&w, x))
    }

    fn weights(d: usize, seed: u64) -> Vec<f64> {
        let mut rng = Rng::seeded(seed);
        (0..d).map(|_| rng.normal()).collect()
    }

    #[test]
    fn rg_with_unit_groups_is_plain_fd() {
        let g = |x: &[f64]| Ok(x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v.sin()).sum());
        let x: Vec<f64> = (0..13).map(|i| i as f64 * 0.1).collect();
        let est = estimate_rg(&g, &x, 1, 0.01, &mut Rng::seeded(4), ResidualDivisor::GroupSize).unwrap();
        assert_eq!(est.entries, two_sided_fd(&g, &x, 0.01).unwrap());
        assert_eq!(est.queries_used, 26);
    }

    #[test]
    fn rg_entries_are_group_means_on_linear_functions() {
        let d = 12;
        let w = weights(d, 1);
        let g = linear(w.clone());
        let k = 4;
        let mut rng = Rng::seeded(77);
        let groups = random_groups(d, k, &mut rng.clone());
        let est = estimate_rg(&g, &vec![0.5; d], k, 0.1, &mut rng, ResidualDivisor::GroupSize).unwrap();
        for s in &groups {
            let mean = s.iter().map(|&j| w[j]).sum::<f64>() / k as f64;
            for &j in s {
                assert!((est.entries[j] - mean).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn residual_divisor_options() {
        let d = 10;
        let g = linear(vec![1.0; d]);
        let x = vec![0.0; d];
        let k = 4;
        let listing = estimate_rg(&g, &x, k, 0.5, &mut Rng::seeded(2), ResidualDivisor::GroupSize).unwrap();
        let actual = estimate_rg(&g, &x, k, 0.5, &mut Rng::seeded(2), ResidualDivisor::ActualSize).unwrap();
        let groups = random_groups(d, k, &mut Rng::seeded(2));
        let last = groups.last().unwrap();
        assert_eq!(last.len(), 2);
        for &j in last {
            // sum of 2 unit weights over k=4 vs over the 2 actual members
            assert!((listing.entries[j] - 0.5).abs() < 1e-12);
            assert!((actual.entries[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rg_query_count_and_partition() {
        let d = 784;
        let calls = Cell::new(0u64);
        let g = |_: &[f64]| {
            calls.set(calls.get() + 1);
            Ok(0.0)
        };
        let est = estimate_rg(
            &g,
            &vec![0.0; d],
            8,
            0.01,
            &mut Rng::seeded(0),
            ResidualDivisor::GroupSize,
        )
        .unwrap();
        assert_eq!(est.queries_used, 196);
        assert_eq!(calls.get(), 196);

        let groups = random_groups(d, 8, &mut Rng::seeded(5));
        assert_eq!(groups.len(), 98);
        let mut seen = vec![false; d];
        for s in &groups {
            assert_eq!(s.len(), 8);
            for &j in s {
                assert!(!seen[j]);
                seen[j] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
        assert_eq!(groups, random_groups(d, 8, &mut Rng::seeded(5)));
        assert!(estimate_rg(&g, &[0.0; 3], 4, 0.1, &mut Rng::seeded(0), ResidualDivisor::GroupSize).is_err());
    }

    #[test]
    fn pca_with_complete_basis_recovers_linear_gradient() {
        let d = 6;
        let mut rng = Rng::seeded(8);
        let cols: Vec<Vec<f64>> = (0..30).map(|_| rng.normal_vec(d)).collect();
        let basis = pca_fit(&Mat::from_columns(&cols).unwrap(), d).unwrap();
        let w = weights(d, 3);
        let est = estimate_pca(&linear(w.clone()), &vec![0.2; d], &basis, 0.01).unwrap();
        for (a, b) in est.entries.iter().zip(&w) {
            assert!((a - b).abs() <= 1e-9);
        }
        assert_eq!(est.queries_used, 2 * d as u64);
    }

    #[test]
    fn pca_single_axis_and_orthogonal_gradient() {
        let basis = PcaBasis {
            components: Mat::from_columns(&[vec![1.0, 0.0, 0.0]]).unwrap(),
            eigenvalues: vec![1.0],
        };
        let est = estimate_pca(&linear(vec![2.0, -3.0, 4.0]), &[0.0; 3], &basis, 0.1).unwrap();
        assert!((est.entries[0] - 2.0).abs() < 1e-12);
        assert_eq!(&est.entries[1..], &[0.0, 0.0]);

        let est = estimate_pca(&linear(vec![0.0, -3.0, 4.0]), &[0.0; 3], &basis, 0.1).unwrap();
        assert_eq!(est.entries, vec![0.0; 3]);
        assert!(estimate_pca(&linear(vec![0.0; 2]), &[0.0; 2], &basis, 0.1).is_err());
    }

    #[test]
    fn pca_estimate_is_the_subspace_projection() {
        let d = 8;
        let mut rng = Rng::seeded(10);
        let cols: Vec<Vec<f64>> = (0..40).map(|_| rng.normal_vec(d)).collect();
        let basis = pca_fit(&Mat::from_columns(&cols).unwrap(), 3).unwrap();
        let w = weights(d, 4);
        let est = estimate_pca(&linear(w.clone()), &vec![0.0; d], &basis, 0.05).unwrap();
        let mut proj = vec![0.0; d];
        for i in 0..3 {
            let u = basis.component(i);
            let c = dot(&u, &w);
            proj.iter_mut().zip(&u).for_each(|(p, ui)| *p += c * ui);
        }
        for (a, b) in est.entries.iter().zip(&proj) {
            assert!((a - b).abs() <= 1e-9);
        }
        // nothing outside the span: removing the projection leaves zero
        let mut resid = est.entries.clone();
        for i in 0..3 {
            let u = basis.component(i);
            let c = dot(&u, &est.entries);
            resid.iter_mut().zip(&u).for_each(|(r, ui)| *r -= c * ui);
        }
        assert!(resid.iter().all(|r| r.abs() <= 1e-9));
    }
}
