//! Central-difference gradient checks.

use super::Variable;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    fn new(analytic: Vec<f64>, numeric: Vec<f64>, tol: f64) -> Self {
        let max_rel_error = relative_error(&analytic, &numeric);
        GradCheckReport {
            passed: max_rel_error <= tol,
            max_rel_error,
            tol,
            analytic,
            numeric,
        }
    }
}

/// Largest per-entry relative error. The denominator is floored at 1e-3 of
/// the largest numeric entry so that entries which are zero up to rounding
/// are judged on the gradient's overall scale.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn analytic_grad(f: &impl Fn(&Variable) -> Result<Variable>, x: &Variable) -> Result<Vec<f64>> {
    let saved = x.grad();
    x.zero_grad();
    f(x)?.backward().join()?;
    let grad = match x.grad() {
        Some(g) => g.to_f64_vec()?,
        None => vec![0.0; x.data().numel()],
    };
    x.set_grad(saved)?;
    Ok(grad)
}

/// Compares the analytic gradient of `f` at `x` with central differences of
/// `f` itself, evaluated in float32.
pub fn finite_difference_check(
    f: impl Fn(&Variable) -> Result<Variable>,
    x: &Variable,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let analytic = analytic_grad(&f, x)?;
    let original = x.data();
    let base = original.to_vec::<f32>()?;
    let shape = original.shape().to_vec();
    let mut numeric = Vec::with_capacity(base.len());
    let eval = |i: usize, v: f32| -> Result<f64> {
        let mut probe = base.clone();
        probe[i] = v;
        x.set_data(Tensor::from_vec_in(original.backend(), probe, &shape)?)?;
        Ok(f(x)?.data().item()? as f64)
    };
    for (i, &b) in base.iter().enumerate() {
        let (hi, lo) = (b + h as f32, b - h as f32);
        let d = (eval(i, hi)? - eval(i, lo)?) / (hi as f64 - lo as f64);
        numeric.push(d);
    }
    x.set_data(original)?;
    Ok(GradCheckReport::new(analytic, numeric, tol))
}

/// Like [`finite_difference_check`], but central differences are taken on
/// `reference`, a float64 implementation of the same function.
pub fn finite_difference_check_with(
    f: impl Fn(&Variable) -> Result<Variable>,
    reference: impl Fn(&[f64]) -> f64,
    x: &Variable,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let analytic = analytic_grad(&f, x)?;
    let mut probe = x.data().to_f64_vec()?;
    let mut numeric = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let v = probe[i];
        probe[i] = v + h;
        let hi = reference(&probe);
        probe[i] = v - h;
        let lo = reference(&probe);
        probe[i] = v;
        numeric.push((hi - lo) / (2.0 * h));
    }
    Ok(GradCheckReport::new(analytic, numeric, tol))
}
