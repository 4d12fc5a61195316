//! Central finite-difference checks of tape gradients (64-bit only).

use super::{no_grad, Tensor};
use crate::error::Result;

/// Gradient entries smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
    pub max_rel_err: f64,
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of the scalar `f(inputs)` with central
/// differences of step `h`. At most `max_per_input` evenly spaced entries of
/// each input are perturbed.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, h: f64, max_per_input: usize) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|t| Tensor::param(t.to_vec(), t.shape()))
        .collect::<Result<_>>()?;
    f(&leaves)?.backward()?;

    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let step = leaf.numel().div_ceil(max_per_input.max(1)).max(1);
        for j in (0..leaf.numel()).step_by(step) {
            let eval = |delta: f64| -> Result<f64> {
                let mut vals: Vec<Tensor<f64>> = inputs.to_vec();
                let mut data = inputs[i].to_vec();
                data[j] += delta;
                vals[i] = Tensor::new(data, inputs[i].shape())?;
                no_grad(|| f(&vals))?.item()
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            max_rel_err = max_rel_err.max(rel_err(analytic[j], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_err, checked })
}
