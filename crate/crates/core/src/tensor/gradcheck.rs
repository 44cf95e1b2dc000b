use super::{Tape, Tensor, Var};
use crate::error::{Result, VadError};

/// Compares the tape gradient of `f` at `x` with central differences.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn finite_diff_check<F>(mut f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(VadError::config(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true)?;
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let mut eval = |data: Vec<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(Tensor::new(x.shape(), data)?, false)?;
        let o = f(&mut t, v)?;
        t.value(o)
            .item()
            .ok_or_else(|| VadError::NonScalarBackward(t.value(o).shape().to_vec()))
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        plus[i] += eps;
        let mut minus = x.data().to_vec();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
