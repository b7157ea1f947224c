//! Central finite-difference gradient oracle.
//!
//! Every analytic gradient in the repo is validated against this module.
//! Perturbations land on the f32 storage grid, so the quotient divides by
//! the realized step rather than the nominal one.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function at `x`.
///
/// Each coordinate is perturbed by `+h` and `-h` (rounded to f32), and the
/// quotient uses the realized step. A non-finite evaluation fails with the
/// offending coordinate.
pub fn finite_difference_gradient(
    mut f: impl FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let mut grad = vec![0.0f32; x.len()];
    let mut probe = x.clone();
    for i in 0..x.len() {
        let xi = x.data()[i] as f64;
        let xp = (xi + h) as f32;
        let xm = (xi - h) as f32;
        let step = xp as f64 - xm as f64;
        if step == 0.0 {
            return Err(Error::Degenerate(format!(
                "step h={h} vanishes at coordinate {i} (value {xi})"
            )));
        }

        probe.data_mut()[i] = xp;
        let fp = f(&probe)?;
        probe.data_mut()[i] = xm;
        let fm = f(&probe)?;
        probe.data_mut()[i] = x.data()[i];

        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "f evaluated non-finite at coordinate {i} (f(+h)={fp}, f(-h)={fm})"
            )));
        }
        grad[i] = ((fp - fm) / step) as f32;
    }
    Tensor::from_vec(x.shape().to_vec(), grad)
}

/// Convenience check: norm-relative error between an analytic gradient and
/// the finite-difference gradient of `f` at `x`.
pub fn gradient_check(
    f: impl FnMut(&Tensor) -> Result<f64>,
    analytic: &Tensor,
    x: &Tensor,
    h: f64,
) -> Result<f64> {
    let numeric = finite_difference_gradient(f, x, h)?;
    crate::tensor::relative_error(analytic, &numeric, 1e-8)
}
