use crate::error::{arg_err, Result};
use crate::numerics::l2_norm;

fn percentage(hits: usize, total: usize) -> f64 {
    100.0 * hits as f64 / total as f64
}

/// Percentage of attacked samples that met the adversary's goal.
pub fn success_rate(successes: &[bool]) -> Result<f64> {
    if successes.is_empty() {
        return arg_err("success rate of an empty result set");
    }
    Ok(percentage(successes.iter().filter(|&&s| s).count(), successes.len()))
}

/// Success rate restricted to samples the model classified correctly before
/// the attack. Misclassified samples leave both numerator and denominator.
pub fn conditioned_success_rate(successes: &[bool], originally_correct: &[bool]) -> Result<f64> {
    if successes.len() != originally_correct.len() {
        return arg_err(format!(
            "{} results but {} correctness flags",
            successes.len(),
            originally_correct.len()
        ));
    }
    let kept: Vec<bool> = successes
        .iter()
        .zip(originally_correct)
        .filter(|(_, &c)| c)
        .map(|(&s, _)| s)
        .collect();
    if kept.is_empty() {
        return arg_err("no correctly classified samples to condition on");
    }
    success_rate(&kept)
}

/// Mean L2 distance between paired benign and adversarial samples.
pub fn avg_distortion<B: AsRef<[f64]>, A: AsRef<[f64]>>(benign: &[B], adversarial: &[A]) -> Result<f64> {
    if benign.len() != adversarial.len() {
        return arg_err(format!(
            "{} benign samples but {} adversarial samples",
            benign.len(),
            adversarial.len()
        ));
    }
    if benign.is_empty() {
        return arg_err("average distortion of an empty set");
    }
    let mut total = 0.0;
    for (i, (b, a)) in benign.iter().zip(adversarial).enumerate() {
        let (b, a) = (b.as_ref(), a.as_ref());
        if b.len() != a.len() {
            return arg_err(format!("pair {i} has dimensions {} and {}", b.len(), a.len()));
        }
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        total += l2_norm(&diff);
    }
    Ok(total / benign.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn success_rate_fixtures() {
        assert_eq!(success_rate(&[true, true, true]).unwrap(), 100.0);
        assert_eq!(success_rate(&[true, false, false, false]).unwrap(), 25.0);
        let mut v = vec![true; 929];
        v.extend(vec![false; 71]);
        assert_eq!(success_rate(&v).unwrap(), 92.9);
        assert!(success_rate(&[]).is_err());
    }

    #[test]
    fn conditioned_rate_drops_misclassified_samples() {
        // sample 0 was misclassified to begin with
        let s = [true, true, false];
        let c = [false, true, true];
        assert_eq!(conditioned_success_rate(&s, &c).unwrap(), 50.0);
        assert!(conditioned_success_rate(&s, &[false; 3]).is_err());
        assert!(conditioned_success_rate(&s, &[true]).is_err());
    }

    #[test]
    fn distortion_fixtures() {
        let b = [vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]];
        assert_eq!(avg_distortion(&b, &b).unwrap(), 0.0);
        assert_eq!(avg_distortion(&[[0.0, 0.0]], &[[3.0, 4.0]]).unwrap(), 5.0);
        assert_eq!(avg_distortion(&[[0.0], [1.0]], &[[2.0], [5.0]]).unwrap(), 3.0);
        assert!(avg_distortion(&[[0.0]], &[[0.0, 1.0]]).is_err());
        assert!(avg_distortion(&b, &b[..2]).is_err());
    }
}
