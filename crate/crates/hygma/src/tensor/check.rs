//! Numerical gradient verification.
//!
//! [`grad_check`] compares the tape's reverse-mode gradient of a scalar
//! function against central finite differences, coordinate by coordinate. It
//! is the trust anchor for every differentiable component in the crate: if a
//! block's `grad_check` error is small, its backward rule agrees with its
//! forward rule.

use super::tape::{Tape, Var};
use super::{Result, Tensor, TensorError};

/// Maximum relative disagreement between the analytic gradient of `f` at `x`
/// and a central-difference estimate with step `eps`.
///
/// The error for coordinate `i` is `|analytic_i - central_i| /
/// max(1, |central_i|)`; the maximum over coordinates is returned. `f` must
/// build a scalar on the provided tape. Non-finite values anywhere in the
/// comparison are rejected rather than silently compared.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf_grad(x.clone());
    let loss = f(&mut tape, xv)?;
    if tape.value(loss).numel() != 1 {
        return Err(TensorError::NonScalarLoss { shape: tape.value(loss).shape().to_vec() });
    }
    tape.backward(loss)?;
    // A constant function never reaches x; its gradient is zero everywhere.
    let analytic: Vec<f64> = match tape.grad(xv) {
        Some(g) => g.to_vec(),
        None => vec![0.0; x.numel()],
    };
    if !analytic.iter().all(|v| v.is_finite()) {
        return Err(TensorError::NonFinite { ctx: "analytic gradient".into() });
    }

    let eval = |pt: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf_grad(pt.clone());
        let l = f(&mut t, v)?;
        Ok(t.value(l).data()[0])
    };

    let mut max_err = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let central = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
        if !central.is_finite() {
            return Err(TensorError::NonFinite { ctx: format!("central difference at {i}") });
        }
        let err = (analytic[i] - central).abs() / central.abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
