//! Central-difference gradient oracle used to validate every analytic
//! backward pass in the crate.

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Central difference `(f(x + eps e_j) - f(x - eps e_j)) / 2 eps` for every coordinate.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut probe = x.clone();
    let mut grad = x.zeros_like();
    for j in 0..x.len() {
        let orig = probe.data()[j];
        probe.data_mut()[j] = orig + eps;
        let hi = f(&probe);
        probe.data_mut()[j] = orig - eps;
        let lo = f(&probe);
        probe.data_mut()[j] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::OracleNonFinite { coordinate: j });
        }
        grad.data_mut()[j] = (hi - lo) / (2.0 * eps);
    }
    Ok(grad)
}

/// Denominator floor of [`relative_error`]. A central difference of an O(1)
/// loss at `eps = 1e-5` resolves gradients only to about `1e-11`, so smaller
/// magnitudes are compared absolutely at `1e-6 * tolerance`.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// Elementwise maximum of [`relative_error`].
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
}

/// Compares `analytic` against finite differences of `loss` for every tensor in `params`.
pub fn check_param_set<P, F>(params: &P, analytic: &P, eps: f64, loss: F) -> Result<Vec<TensorCheck>>
where
    P: ParamSet + Clone,
    F: Fn(&P) -> f64,
{
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let grads = analytic.tensors();
    let mut out = Vec::with_capacity(names.len());
    for (idx, name) in names.into_iter().enumerate() {
        let base = params.tensors()[idx].1.clone();
        let mut scratch = params.clone();
        let numeric = finite_difference_gradient(
            |probe| {
                *scratch.tensors_mut()[idx].1 = probe.clone();
                loss(&scratch)
            },
            &base,
            eps,
        )?;
        out.push(TensorCheck {
            max_rel_error: max_relative_error(grads[idx].1, &numeric),
            name,
        });
    }
    Ok(out)
}
