use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Returns the new parameter and state; the
/// inputs are left untouched so a rejected update costs nothing.
pub fn adam_step(
    param: &Tensor,
    grad: &Tensor,
    state: &AdamState,
    lr: f64,
) -> Result<(Tensor, AdamState)> {
    grad.ensure_shape("adam_step(grad)", param.shape())?;
    state.m.ensure_shape("adam_step(m)", param.shape())?;
    state.v.ensure_shape("adam_step(v)", param.shape())?;
    if let Some(i) = grad.data().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("adam_step gradient at index {i}"),
        });
    }

    let mut next = state.clone();
    next.step += 1;
    let t = next.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let mut out = param.clone();
    for (((p, &g), m), v) in out
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(next.m.data_mut())
        .zip(next.v.data_mut())
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok((out, next))
}
