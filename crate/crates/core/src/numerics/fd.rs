use crate::error::{arg_err, Error, Result};

use super::linalg::Mat;

/// A scalar function of a feature vector.
///
/// `eval_rows` evaluates every row of a matrix; implementors backed by a
/// batched model override it, but the result must equal calling `eval` on
/// each row in order.
pub trait Objective {
    fn eval(&self, x: &[f64]) -> Result<f64>;

    fn eval_rows(&self, points: &Mat) -> Result<Vec<f64>> {
        (0..points.rows()).map(|i| self.eval(points.row(i))).collect()
    }
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> Result<f64>,
{
    fn eval(&self, x: &[f64]) -> Result<f64> {
        self(x)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return arg_err(format!("finite-difference step must be positive, got {delta}"));
    }
    Ok(())
}

/// Central difference quotient of a `+`/`-` evaluation pair.
pub(crate) fn central_quotient(plus: f64, minus: f64, denom: f64, index: usize) -> Result<f64> {
    for value in [plus, minus] {
        if !value.is_finite() {
            return Err(Error::Estimation { index, value });
        }
    }
    Ok((plus - minus) / denom)
}

/// Two-sided finite-difference gradient of `g` at `x`.
///
/// Evaluates `g` at `x + δe_i` and `x - δe_i` for every coordinate (2d
/// evaluations, submitted as one batch in that order).
pub fn two_sided_fd<G: Objective + ?Sized>(g: &G, x: &[f64], delta: f64) -> Result<Vec<f64>> {
    check_delta(delta)?;
    let d = x.len();
    if d == 0 {
        return arg_err("cannot differentiate at an empty point");
    }
    let mut probes = Mat::zeros(2 * d, d);
    for i in 0..d {
        let plus = probes.row_mut(2 * i);
        plus.copy_from_slice(x);
        plus[i] = x[i] + delta;
        let minus = probes.row_mut(2 * i + 1);
        minus.copy_from_slice(x);
        minus[i] = x[i] - delta;
    }
    let values = g.eval_rows(&probes)?;
    (0..d)
        .map(|i| central_quotient(values[2 * i], values[2 * i + 1], 2.0 * delta, i))
        .collect()
}

/// Two-sided directional difference `(g(x+δv) - g(x-δv)) / 2δ`.
pub fn directional_fd<G: Objective + ?Sized>(g: &G, x: &[f64], v: &[f64], delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if v.len() != x.len() {
        return arg_err(format!(
            "direction has length {} but the point has length {}",
            v.len(),
            x.len()
        ));
    }
    let probes = symmetric_probes(x, &[v], delta);
    let values = g.eval_rows(&probes)?;
    central_quotient(values[0], values[1], 2.0 * delta, 0)
}

/// Rows `x + δv_j`, `x - δv_j` for each direction in order.
pub(crate) fn symmetric_probes<V: AsRef<[f64]>>(x: &[f64], dirs: &[V], delta: f64) -> Mat {
    let d = x.len();
    let mut probes = Mat::zeros(2 * dirs.len(), d);
    for (j, v) in dirs.iter().enumerate() {
        let v = v.as_ref();
        for (p, (&xi, &vi)) in probes.row_mut(2 * j).iter_mut().zip(x.iter().zip(v)) {
            *p = xi + delta * vi;
        }
        for (p, (&xi, &vi)) in probes.row_mut(2 * j + 1).iter_mut().zip(x.iter().zip(v)) {
            *p = xi - delta * vi;
        }
    }
    probes
}
