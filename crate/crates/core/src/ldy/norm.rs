//! Mean/variance normalization with a learned per-frequency affine. The
//! temporal variant standardizes each column of a `[T, F]` matrix over time;
//! the feature variant standardizes an `F` vector over its entries. Variance
//! uses the biased 1/n estimator.

use serde::{Deserialize, Serialize};

use crate::numeric::Tensor;

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub alpha: Tensor,
    pub beta: Tensor,
}

impl Affine {
    pub fn identity(n: usize) -> Self {
        Self {
            alpha: Tensor::filled(&[n], 1.0),
            beta: Tensor::zeros(&[n]),
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Saved statistics for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache {
    /// Standardized input before the affine, same shape as the input.
    pub xhat: Tensor,
    /// `1 / sqrt(var + eps)` per normalized group.
    pub inv_std: Vec<f64>,
}

pub fn temporal_norm_cached(x: &Tensor, aff: &Affine) -> (Tensor, NormCache) {
    let (rows, cols) = (x.rows(), x.cols());
    let n = rows as f64;
    let mut xhat = Tensor::zeros(&[rows, cols]);
    let mut y = Tensor::zeros(&[rows, cols]);
    let mut inv_std = vec![0.0; cols];
    for c in 0..cols {
        let mean = (0..rows).map(|t| x.at(t, c)).sum::<f64>() / n;
        let var = (0..rows).map(|t| (x.at(t, c) - mean).powi(2)).sum::<f64>() / n;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_std[c] = is;
        let (a, b) = (aff.alpha.data()[c], aff.beta.data()[c]);
        for t in 0..rows {
            let h = (x.at(t, c) - mean) * is;
            *xhat.at_mut(t, c) = h;
            *y.at_mut(t, c) = a * h + b;
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub fn temporal_norm(x: &Tensor, aff: &Affine) -> Tensor {
    temporal_norm_cached(x, aff).0
}

/// Returns `(dx, dalpha, dbeta)`; mean and variance are differentiated as
/// functions of the input.
pub fn temporal_norm_backward(dy: &Tensor, cache: &NormCache, aff: &Affine) -> (Tensor, Tensor, Tensor) {
    let (rows, cols) = (dy.rows(), dy.cols());
    let n = rows as f64;
    let mut dx = Tensor::zeros(&[rows, cols]);
    let mut dalpha = Tensor::zeros(&[cols]);
    let mut dbeta = Tensor::zeros(&[cols]);
    for c in 0..cols {
        let a = aff.alpha.data()[c];
        let (mut sum_dh, mut sum_dh_h, mut da, mut db) = (0.0, 0.0, 0.0, 0.0);
        for t in 0..rows {
            let g = dy.at(t, c);
            let h = cache.xhat.at(t, c);
            db += g;
            da += g * h;
            sum_dh += g * a;
            sum_dh_h += g * a * h;
        }
        dalpha.data_mut()[c] = da;
        dbeta.data_mut()[c] = db;
        let k = cache.inv_std[c] / n;
        for t in 0..rows {
            let dh = dy.at(t, c) * a;
            *dx.at_mut(t, c) = k * (n * dh - sum_dh - cache.xhat.at(t, c) * sum_dh_h);
        }
    }
    (dx, dalpha, dbeta)
}

pub fn feature_norm_cached(h: &[f64], aff: &Affine) -> (Vec<f64>, NormCache) {
    let n = h.len() as f64;
    let mean = h.iter().sum::<f64>() / n;
    let var = h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let is = 1.0 / (var + NORM_EPS).sqrt();
    let xhat: Vec<f64> = h.iter().map(|v| (v - mean) * is).collect();
    let y = xhat
        .iter()
        .zip(aff.alpha.data().iter().zip(aff.beta.data()))
        .map(|(x, (a, b))| a * x + b)
        .collect();
    let len = xhat.len();
    (
        y,
        NormCache {
            xhat: Tensor::from_vec(&[len], xhat).expect("length matches"),
            inv_std: vec![is],
        },
    )
}

pub fn feature_norm(h: &[f64], aff: &Affine) -> Vec<f64> {
    feature_norm_cached(h, aff).0
}

pub fn feature_norm_backward(dy: &[f64], cache: &NormCache, aff: &Affine) -> (Vec<f64>, Tensor, Tensor) {
    let n = dy.len() as f64;
    let xhat = cache.xhat.data();
    let dh: Vec<f64> = dy.iter().zip(aff.alpha.data()).map(|(g, a)| g * a).collect();
    let sum_dh: f64 = dh.iter().sum();
    let sum_dh_h: f64 = dh.iter().zip(xhat).map(|(d, h)| d * h).sum();
    let k = cache.inv_std[0] / n;
    let dx = dh
        .iter()
        .zip(xhat)
        .map(|(d, h)| k * (n * d - sum_dh - h * sum_dh_h))
        .collect();
    let dalpha = dy.iter().zip(xhat).map(|(g, h)| g * h).collect();
    (
        dx,
        Tensor::from_vec(&[dy.len()], dalpha).expect("length matches"),
        Tensor::from_vec(&[dy.len()], dy.to_vec()).expect("length matches"),
    )
}
