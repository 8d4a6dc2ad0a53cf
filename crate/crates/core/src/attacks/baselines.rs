use crate::error::{arg_err, Result};
use crate::numerics::{l2_norm, Mat, Rng};

use super::AttackBudget;

/// `clip(x + ε·sign(p))` with `p ~ N(0, I)`.
pub fn random_perturbation(x: &[f64], budget: &AttackBudget, rng: &mut Rng) -> Vec<f64> {
    let noise = rng.normal_vec(x.len());
    budget.signed_step(x, x, &noise, budget.epsilon)
}

/// Per-class feature means. Classes without samples get an empty vector.
pub fn class_means(features: &Mat, labels: &[usize], num_classes: usize) -> Result<Vec<Vec<f64>>> {
    if features.rows() != labels.len() {
        return arg_err("features and labels differ in length");
    }
    let d = features.cols();
    let mut sums = vec![vec![0.0; d]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return arg_err(format!("label {y} out of range"));
        }
        sums[y].iter_mut().zip(features.row(i)).for_each(|(s, v)| *s += v);
        counts[y] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| {
            if c == 0 {
                Vec::new()
            } else {
                s.into_iter().map(|v| v / c as f64).collect()
            }
        })
        .collect())
}

/// Step of size ε along `sign(μ_T - μ_y)`.
///
/// Untargeted calls pick `T` as the class whose mean is nearest (in L2) to
/// `μ_y`, lowest index on ties.
pub fn diff_of_means(
    x: &[f64],
    y: usize,
    class_means: &[Vec<f64>],
    budget: &AttackBudget,
    target: Option<usize>,
) -> Result<Vec<f64>> {
    let c = class_means.len();
    if c < 2 {
        return arg_err(format!("difference of means needs at least 2 classes, got {c}"));
    }
    if y >= c || class_means[y].len() != x.len() {
        return arg_err(format!("no mean available for class {y}"));
    }
    let mu_y = &class_means[y];
    let t = match target {
        Some(t) => {
            if t >= c || t == y || class_means[t].len() != x.len() {
                return arg_err(format!("invalid target class {t}"));
            }
            t
        }
        None => {
            let mut best: Option<(usize, f64)> = None;
            for (i, mu) in class_means.iter().enumerate() {
                if i == y || mu.len() != x.len() {
                    continue;
                }
                let diff: Vec<f64> = mu.iter().zip(mu_y).map(|(a, b)| a - b).collect();
                let dist = l2_norm(&diff);
                if best.is_none_or(|(_, d)| dist < d) {
                    best = Some((i, dist));
                }
            }
            match best {
                Some((i, _)) => i,
                None => return arg_err("no other class has a mean"),
            }
        }
    };
    let direction: Vec<f64> = class_means[t].iter().zip(mu_y).map(|(a, b)| a - b).collect();
    Ok(budget.signed_step(x, x, &direction, budget.epsilon))
}
