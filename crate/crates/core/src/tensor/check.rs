//! Finite-difference gradient checking.
//!
//! The independent oracle for every differentiable op in the crate:
//! central differences of the forward value against the analytic
//! gradient from the tape.

use super::Tensor;
use crate::error::{Error, Result};

/// Max relative error between the analytic gradient of `f` at `x` and a
/// central finite-difference estimate.
///
/// `f` must be a deterministic scalar function; it is re-evaluated twice
/// per element of `x`. The error is
/// `max_k |analytic_k − central_k| / (|central_k| + 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Tensor,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!(
            "grad_check eps must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    let base = x.to_vec();
    let shape = x.shape().to_vec();

    let leaf = Tensor::param(&shape, base.clone());
    let loss = f(&leaf);
    if !loss.is_scalar() {
        return Err(Error::Contract(format!(
            "grad_check requires a scalar-valued f, got shape {:?}",
            loss.shape()
        )));
    }
    loss.backward()?;
    let analytic = leaf
        .grad()
        .unwrap_or_else(|| vec![0.0; base.len()]);

    let mut max_err = 0.0_f64;
    for k in 0..base.len() {
        let mut plus = base.clone();
        plus[k] += eps;
        let mut minus = base.clone();
        minus[k] -= eps;
        let fp = f(&Tensor::new(&shape, plus)).item();
        let fm = f(&Tensor::new(&shape, minus)).item();
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!(
                "f is non-finite at perturbed element {k}: f+={fp}, f-={fm}"
            )));
        }
        let central = (fp - fm) / (2.0 * eps);
        let err = (analytic[k] - central).abs() / (central.abs() + 1e-8);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

/// Run `grad_check` against several named parameter tensors of one loss.
/// `f` receives the full parameter list with exactly one entry replaced
/// by the probe tensor. Returns the worst (name, error) observed.
pub fn grad_check_multi<F>(f: F, params: &[(&str, &Tensor)], eps: f64) -> Result<(String, f64)>
where
    F: Fn(&[Tensor]) -> Tensor,
{
    let mut worst = (String::new(), 0.0_f64);
    for (idx, (name, _)) in params.iter().enumerate() {
        let err = grad_check(
            |probe| {
                let args: Vec<Tensor> = params
                    .iter()
                    .enumerate()
                    .map(|(j, (_, p))| if j == idx { probe.clone() } else { (*p).detach() })
                    .collect();
                f(&args)
            },
            params[idx].1,
            eps,
        )?;
        if err > worst.1 {
            worst = (name.to_string(), err);
        }
    }
    Ok(worst)
}
