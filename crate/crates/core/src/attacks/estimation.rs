use crate::error::{arg_err, Result};
use crate::losses::{attack_objective, AttackMode, LossKind, LossSpec};
use crate::numerics::{Objective, Rng};
use crate::oracle::{recover_logits, Oracle};
use crate::query_reduction::estimate_gradient;

use super::{AttackConfig, AttackResult};

/// Stream offset separating the random-start draw from the attack's own RNG.
const RAND_INIT_STREAM: u64 = 0x005e_ed0f_1a17;

fn check_oracle<O: Oracle + ?Sized>(oracle: &O, x: &[f64]) -> Result<()> {
    if x.len() != oracle.input_dim() {
        return arg_err(format!(
            "input has {} features, oracle expects {}",
            x.len(),
            oracle.input_dim()
        ));
    }
    Ok(())
}

/// Resolves the loss for this run, spending one query at `x` when the
/// runner-up class is frozen.
fn resolve_loss<O: Oracle + ?Sized>(oracle: &O, x: &[f64], config: &AttackConfig) -> Result<(LossSpec, u64)> {
    let mut spec = config.loss;
    match (config.freeze_runner_up, spec.kind, spec.mode) {
        (true, LossKind::Logit, AttackMode::Untargeted { label }) => {
            let phi = recover_logits(&oracle.query_probs(x)?);
            spec.frozen_runner_up = Some(phi.argmax_excluding(label));
            Ok((spec, 1))
        }
        _ => Ok((spec, 0)),
    }
}

fn finish<O: Oracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    x_adv: Vec<f64>,
    spec: &LossSpec,
    queries: u64,
) -> Result<AttackResult> {
    let predicted = oracle.query_probs(&x_adv)?.argmax();
    Ok(AttackResult::new(x, x_adv, predicted, spec, queries + 1))
}

/// One estimated ascent direction at `at`.
fn ascent_estimate<G: Objective + ?Sized>(
    g: &G,
    at: &[f64],
    spec: &LossSpec,
    config: &AttackConfig,
    rng: &mut Rng,
) -> Result<(Vec<f64>, u64)> {
    let est = estimate_gradient(g, at, config.delta, &config.reduction, rng)?;
    let s = spec.ascent_sign();
    Ok((est.entries.into_iter().map(|v| s * v).collect(), est.queries_used))
}

/// Single-step gradient-estimation attack.
///
/// Estimates the gradient of the attack objective with two-sided
/// differences (or the configured query-reduced estimator), takes one
/// signed ε-step and verifies the result with one more query.
pub fn fd_attack<O: Oracle + ?Sized>(oracle: &O, x: &[f64], config: &AttackConfig) -> Result<AttackResult> {
    config.validate_estimation()?;
    check_oracle(oracle, x)?;
    config.budget.check_point(x)?;
    let (spec, mut queries) = resolve_loss(oracle, x, config)?;
    let g = attack_objective(oracle, spec)?;
    let mut rng = Rng::seeded(config.seed);
    let (direction, used) = ascent_estimate(&g, x, &spec, config, &mut rng)?;
    queries += used;
    let x_adv = config.budget.signed_step(x, x, &direction, config.budget.epsilon);
    finish(oracle, x, x_adv, &spec, queries)
}

/// Iterative gradient-estimation attack: `t` projected steps of size `α`,
/// re-estimating the gradient at every iterate.
pub fn ifd_attack<O: Oracle + ?Sized>(oracle: &O, x: &[f64], config: &AttackConfig) -> Result<AttackResult> {
    config.validate_estimation()?;
    config.validate_iterative()?;
    check_oracle(oracle, x)?;
    config.budget.check_point(x)?;
    let (spec, mut queries) = resolve_loss(oracle, x, config)?;
    let g = attack_objective(oracle, spec)?;
    let mut rng = Rng::seeded(config.seed);
    let mut cur = x.to_vec();
    for _ in 0..config.iterations {
        let (direction, used) = ascent_estimate(&g, &cur, &spec, config, &mut rng)?;
        queries += used;
        cur = config.budget.signed_step(x, &cur, &direction, config.alpha);
    }
    finish(oracle, x, cur, &spec, queries)
}

/// Runs `attack` from a random start `x' = clip(x + m·sign(N(0, I)))` with
/// the remaining budget `ε - m`, so the total displacement from `x` never
/// exceeds ε.
pub fn rand_init_then<F>(x: &[f64], config: &AttackConfig, attack: F) -> Result<AttackResult>
where
    F: FnOnce(&[f64], &AttackConfig) -> Result<AttackResult>,
{
    let m = config.init_rand_magnitude;
    if !(m >= 0.0 && m.is_finite()) {
        return arg_err(format!("random-start magnitude must be non-negative, got {m}"));
    }
    if m > config.budget.epsilon {
        return arg_err(format!(
            "random-start magnitude {m} exceeds the budget {}",
            config.budget.epsilon
        ));
    }
    if m == 0.0 {
        return attack(x, config);
    }
    config.budget.check_point(x)?;
    let mut rng = Rng::seeded(config.seed ^ RAND_INIT_STREAM);
    let noise = rng.normal_vec(x.len());
    let start_budget = super::AttackBudget {
        epsilon: m,
        ..config.budget
    };
    let start = start_budget.signed_step(x, x, &noise, m);

    let mut inner = config.clone();
    inner.budget.epsilon = config.budget.epsilon - m;
    inner.init_rand_magnitude = 0.0;
    let result = attack(&start, &inner)?;

    let mut x_adv = result.x_adv;
    config.budget.project(x, &mut x_adv);
    let mut out = AttackResult::new(x, x_adv, result.predicted, &config.loss, result.queries);
    out.success = result.success;
    Ok(out)
}

/// SPSA: each step estimates the objective's slope along a Rademacher
/// direction `v` with two queries, `ĝ = (g(x+δv) - g(x-δv)) / 2δ · v`, and
/// takes a projected signed step of size `α`.
pub fn spsa_attack<O: Oracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    config: &AttackConfig,
    steps: usize,
) -> Result<AttackResult> {
    config.validate_estimation()?;
    check_oracle(oracle, x)?;
    config.budget.check_point(x)?;
    if steps == 0 {
        // nothing is queried, so the prediction is left unverified and the
        // attack is reported as unsuccessful
        let mut r = AttackResult::new(x, x.to_vec(), config.loss.mode.class(), &config.loss, 0);
        r.success = false;
        return Ok(r);
    }
    if !(config.alpha > 0.0) {
        return arg_err(format!("alpha must be positive, got {}", config.alpha));
    }
    let (spec, mut queries) = resolve_loss(oracle, x, config)?;
    let g = attack_objective(oracle, spec)?;
    let mut rng = Rng::seeded(config.seed);
    let s = spec.ascent_sign();
    let d = x.len();
    let mut cur = x.to_vec();
    for _ in 0..steps {
        let v: Vec<f64> = (0..d).map(|_| rng.rademacher()).collect();
        let slope = crate::numerics::directional_fd(&g, &cur, &v, config.delta)?;
        queries += 2;
        let direction: Vec<f64> = v.iter().map(|vi| s * slope * vi).collect();
        cur = config.budget.signed_step(x, &cur, &direction, config.alpha);
    }
    finish(oracle, x, cur, &spec, queries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{fgs_whitebox, ifgs_whitebox, AttackBudget};
    use crate::model::MlpModel;
    use crate::numerics::Mat;
    use crate::oracle::{with_counter, LocalOracle};
    use crate::query_reduction::Reduction;
    use std::sync::Arc;

    fn linear_model(d: usize, c: usize, seed: u64) -> Arc<MlpModel> {
        let mut rng = Rng::seeded(seed);
        let w: Vec<f64> = (0..c * d).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..c).map(|_| 0.1 * rng.normal()).collect();
        Arc::new(MlpModel::linear(Mat::new(c, d, w).unwrap(), b, (0.0, 1.0)).unwrap())
    }

    fn config(eps: f64, spec: LossSpec) -> AttackConfig {
        AttackConfig::new(AttackBudget::new(eps, (0.0, 1.0)).unwrap(), spec)
    }

    fn point(d: usize, seed: u64) -> Vec<f64> {
        let mut rng = Rng::seeded(seed);
        (0..d).map(|_| rng.uniform_in(0.2, 0.8)).collect()
    }

    #[test]
    fn fd_matches_whitebox_on_linear_models() {
        let model = linear_model(20, 4, 1);
        let oracle = LocalOracle::new(model.clone());
        for seed in 0..5 {
            let x = point(20, seed);
            let label = model.predict(&x).unwrap();
            for mode in [
                AttackMode::Untargeted { label },
                AttackMode::Targeted {
                    target: (label + 1) % 4,
                },
            ] {
                let cfg = config(0.1, LossSpec::logit(mode));
                let bb = fd_attack(&oracle, &x, &cfg).unwrap();
                let wb = fgs_whitebox(&model, &x, &cfg).unwrap();
                for (a, b) in bb.x_adv.iter().zip(&wb.x_adv) {
                    assert!((a - b).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn query_counts_follow_closed_forms() {
        let model = linear_model(30, 3, 2);
        let (oracle, ledger) = with_counter(LocalOracle::new(model.clone()));
        let x = point(30, 9);
        let label = model.predict(&x).unwrap();
        let mut cfg = config(0.1, LossSpec::logit(AttackMode::Untargeted { label }));

        let r = fd_attack(&oracle, &x, &cfg).unwrap();
        assert_eq!((r.queries, ledger.total()), (61, 61));

        cfg.iterations = 3;
        cfg.reduction = Reduction::random_groups(4);
        let before = ledger.total();
        let r = ifd_attack(&oracle, &x, &cfg).unwrap();
        assert_eq!(r.queries, 3 * 2 * 8 + 1);
        assert_eq!(ledger.total() - before, r.queries);

        let before = ledger.total();
        let r = spsa_attack(&oracle, &x, &cfg, 25).unwrap();
        assert_eq!(r.queries, 51);
        assert_eq!(ledger.total() - before, 51);

        let before = ledger.total();
        let r = spsa_attack(&oracle, &x, &cfg, 0).unwrap();
        assert_eq!((r.queries, ledger.total() - before), (0, 0));
        assert_eq!(r.x_adv, x);
    }

    #[test]
    fn ifd_matches_ifgs_on_linear_models() {
        let model = linear_model(16, 3, 5);
        let oracle = LocalOracle::new(model.clone());
        let x = point(16, 4);
        let label = model.predict(&x).unwrap();
        let mut cfg = config(0.2, LossSpec::logit(AttackMode::Untargeted { label }));
        cfg.iterations = 10;
        cfg.alpha = 0.03;
        let bb = ifd_attack(&oracle, &x, &cfg).unwrap();
        let wb = ifgs_whitebox(&model, &x, &cfg).unwrap();
        for (a, b) in bb.x_adv.iter().zip(&wb.x_adv) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn random_start_respects_the_budget() {
        let model = linear_model(10, 3, 7);
        let oracle = LocalOracle::new(model.clone());
        for trial in 0..200 {
            let x = point(10, 100 + trial);
            let label = model.predict(&x).unwrap();
            let mut cfg = config(0.3, LossSpec::logit(AttackMode::Untargeted { label }));
            cfg.init_rand_magnitude = 0.05;
            cfg.seed = trial;
            let r = rand_init_then(&x, &cfg, |start, c| fd_attack(&oracle, start, c)).unwrap();
            assert!(r.linf_distortion <= 0.3 + 1e-9);
            assert!(r.x_adv.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn zero_magnitude_random_start_is_transparent() {
        let model = linear_model(10, 3, 8);
        let oracle = LocalOracle::new(model.clone());
        let x = point(10, 1);
        let cfg = config(0.2, LossSpec::xent(AttackMode::Untargeted { label: 0 }));
        let a = rand_init_then(&x, &cfg, |s, c| fd_attack(&oracle, s, c)).unwrap();
        let b = fd_attack(&oracle, &x, &cfg).unwrap();
        assert_eq!(a, b);
        let mut too_big = cfg.clone();
        too_big.init_rand_magnitude = 0.5;
        assert!(rand_init_then(&x, &too_big, |s, c| fd_attack(&oracle, s, c)).is_err());
    }

    #[test]
    fn frozen_runner_up_costs_one_query() {
        let model = linear_model(8, 4, 3);
        let (oracle, ledger) = with_counter(LocalOracle::new(model.clone()));
        let x = point(8, 2);
        let label = model.predict(&x).unwrap();
        let mut cfg = config(0.1, LossSpec::logit(AttackMode::Untargeted { label }));
        cfg.freeze_runner_up = true;
        let r = fd_attack(&oracle, &x, &cfg).unwrap();
        assert_eq!(r.queries, 2 * 8 + 2);
        assert_eq!(ledger.total(), r.queries);
    }

    #[test]
    fn stochastic_attacks_are_deterministic() {
        let model = linear_model(12, 3, 4);
        let oracle = LocalOracle::new(model.clone());
        let x = point(12, 3);
        let mut cfg = config(0.2, LossSpec::logit(AttackMode::Untargeted { label: 0 }));
        cfg.reduction = Reduction::random_groups(5);
        cfg.seed = 42;
        cfg.iterations = 4;
        assert_eq!(
            ifd_attack(&oracle, &x, &cfg).unwrap(),
            ifd_attack(&oracle, &x, &cfg).unwrap()
        );
        assert_eq!(
            spsa_attack(&oracle, &x, &cfg, 10).unwrap(),
            spsa_attack(&oracle, &x, &cfg, 10).unwrap()
        );
    }
}
