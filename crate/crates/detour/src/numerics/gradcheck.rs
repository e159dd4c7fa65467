//! Central finite-difference gradient checker.
//!
//! The verification gate for every hand-written backward pass: perturb each
//! parameter element, compare the central difference against the analytic
//! gradient, return the worst relative error.

use super::tensor::Tensor;
use crate::error::{DetourError, Result};

/// Worst relative error between analytic and central-difference gradients.
///
/// `f` must be a deterministic scalar function of `params`; `analytic`
/// produces one gradient tensor per parameter (same shapes). `eps` scales
/// the perturbation step: `h = eps * (1 + |x|)`.
pub fn grad_check<F, G>(f: F, analytic: G, params: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64>,
    G: Fn(&[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(DetourError::InvalidInput(format!(
            "grad_check: eps {} outside [1e-7, 1e-3]",
            eps
        )));
    }
    let base1 = f(params)?;
    let base2 = f(params)?;
    if base1.to_bits() != base2.to_bits() {
        return Err(DetourError::InvalidInput(
            "grad_check: function is not deterministic (two forward calls disagree)".into(),
        ));
    }

    let grads = analytic(params)?;
    if grads.len() != params.len() {
        return Err(DetourError::ShapeMismatch(format!(
            "grad_check: {} params but {} gradients",
            params.len(),
            grads.len()
        )));
    }

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, param) in params.iter().enumerate() {
        if grads[pi].shape() != param.shape() {
            return Err(DetourError::ShapeMismatch(format!(
                "grad_check: param {} shape {:?} vs grad {:?}",
                pi,
                param.shape(),
                grads[pi].shape()
            )));
        }
        for ei in 0..param.len() {
            let x = param.data()[ei];
            let h = eps * (1.0 + x.abs());
            work[pi].data_mut()[ei] = x + h;
            let fp = f(&work)?;
            work[pi].data_mut()[ei] = x - h;
            let fm = f(&work)?;
            work[pi].data_mut()[ei] = x;
            let numeric = (fp - fm) / (2.0 * h);
            let a = grads[pi].data()[ei];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-8 {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / scale
            };
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
