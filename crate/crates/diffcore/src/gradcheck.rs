//! Central finite-difference gradient checking.

use crate::error::{Result, TensorError};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Largest `|analytic - numeric| / max(1, |numeric|)` over all coordinates.
    pub max_rel_error: f64,
    /// Coordinates whose relative error exceeds the tolerance.
    pub failing: Vec<usize>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Compares the tape gradient of a scalar function against central differences.
///
/// `f` receives a fresh tape and the point recorded as a leaf, and must
/// return a scalar built from it.
pub fn check_gradient<F>(f: F, point: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    if !(step > 0.0) {
        return Err(TensorError::Contract(format!("step must be positive, got {step}")));
    }
    let tape = Tape::new();
    let x = tape.var(point);
    let loss = f(&tape, &x)?;
    let analytic = tape.backward(&loss)?.wrt(&x).to_vec();

    let eval = |values: Vec<f64>| -> Result<f64> {
        let tape = Tape::new();
        let x = tape.var(&Tensor::new(point.shape().to_vec(), values)?);
        f(&tape, &x)?.item()
    };
    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let mut plus = point.to_vec();
        plus[i] += step;
        let mut minus = point.to_vec();
        minus[i] -= step;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * step));
    }

    let mut max_rel_error: f64 = 0.0;
    let mut failing = Vec::new();
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = relative_error(a, n);
        max_rel_error = max_rel_error.max(err);
        if !(err < tolerance) {
            failing.push(i);
        }
    }
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_error,
        failing,
    })
}
