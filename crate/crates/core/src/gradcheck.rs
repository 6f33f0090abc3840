//! Central finite-difference checks of reverse-mode gradients.
//!
//! The numeric side only ever calls the forward closure, so it shares no
//! code path with the backward closures under test.

use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

/// Denominator floor for the relative error, so that two near-zero
/// gradients do not register as a large relative mismatch. Scaled by
/// `max(1, |f(x)|)` in [`check_gradients`]: cancellation in
/// `f(x+h) - f(x-h)` leaves noise proportional to the loss itself, and an
/// exactly-zero gradient would otherwise fail on that noise alone.
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(input index, element index)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradient of the scalar returned by `loss` with respect to
/// each tensor in `inputs` against `(f(x+h) - f(x-h)) / 2h`.
///
/// `inputs` must be leaves with `requires_grad`. Their gradients are reset
/// before the analytic pass.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    for x in inputs {
        x.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| x.grad().unwrap_or_else(|| vec![0.0; x.numel()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        checked: 0,
    };
    let eval = || -> Result<f64> { no_grad(|| loss().map(|t| t.item())) };
    let floor = REL_ERR_FLOOR * eval()?.abs().max(1.0);
    for (xi, x) in inputs.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for j in 0..x.numel() {
            let orig = x.data()[j];
            x.data_mut()[j] = orig + h;
            let plus = eval();
            x.data_mut()[j] = orig - h;
            let minus = eval();
            x.data_mut()[j] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = analytic[xi][j];
            let rel = relative_error(a, numeric, floor);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((xi, j));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
