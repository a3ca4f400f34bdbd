//! Lightweight dynamic convolution front-end.
//!
//! A pixel branch (PDF) produces one saliency weight per time-frequency pixel;
//! an instance branch (IDF) produces one direction vector per clip from the
//! temporal mean of the features. Their product gives a rank-1 set of per-pixel
//! kernels which filter the input; the normalized result is added back to the
//! input.

pub mod conv;
pub mod norm;
mod params;

pub use conv::{static_conv, DILATION, KERNEL_SIDE, TAPS};
pub use norm::{feature_norm, temporal_norm, Affine, NormCache, NORM_EPS};
pub use params::{LdyInit, LdyParams};

use conv::{conv_input_grad_into, patch_value, static_conv_kernel_grad};
use norm::{feature_norm_backward, feature_norm_cached, temporal_norm_backward, temporal_norm_cached};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Per-pixel weights in (0, 1), shape `[T, F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelWeights(pub Tensor);

/// One `TAPS`-long vector per clip.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionVector(pub Vec<f64>);

/// `[N, TAPS]`; row `i` is `pixel_weight[i] * direction`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicKernels(pub Tensor);

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn check_input(x: &Tensor, p: &LdyParams) -> Result<()> {
    if x.shape().len() != 2 || x.rows() == 0 || x.cols() != p.freq() {
        return Err(Error::Shape {
            op: "ldy input",
            expected: vec![x.shape().first().copied().unwrap_or(0).max(1), p.freq()],
            actual: x.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn temporal_mean(x: &Tensor) -> Vec<f64> {
    let (rows, cols) = (x.rows(), x.cols());
    let mut h = vec![0.0; cols];
    for t in 0..rows {
        for (acc, v) in h.iter_mut().zip(x.row(t)) {
            *acc += v;
        }
    }
    for v in &mut h {
        *v /= rows as f64;
    }
    h
}

/// `input[in] * w[in, out] + b[out]`.
fn dense(input: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut out = b.data().to_vec();
    for (i, &v) in input.iter().enumerate() {
        for (o, acc) in out.iter_mut().enumerate() {
            *acc += v * w.at(i, o);
        }
    }
    out
}

/// Returns `(d_input, d_w, d_b)` for [`dense`].
fn dense_backward(input: &[f64], w: &Tensor, dout: &[f64]) -> (Vec<f64>, Tensor, Tensor) {
    let (n_in, n_out) = (w.rows(), w.cols());
    let mut dw = Tensor::zeros(&[n_in, n_out]);
    let mut din = vec![0.0; n_in];
    for i in 0..n_in {
        for o in 0..n_out {
            *dw.at_mut(i, o) = input[i] * dout[o];
            din[i] += w.at(i, o) * dout[o];
        }
    }
    (din, dw, Tensor::from_vec(&[n_out], dout.to_vec()).expect("length matches"))
}

fn pdf_parts(x: &Tensor, p: &LdyParams) -> (NormCache, Tensor) {
    let c = static_conv(x, p.pdf_kernel.data());
    let (n, cache) = temporal_norm_cached(&c, &p.norm_pdf);
    (cache, n.map(sigmoid))
}

/// Pixel branch: dilated 3x3 conv, temporal norm, sigmoid.
pub fn pdf_forward(x: &Tensor, p: &LdyParams) -> Result<PixelWeights> {
    check_input(x, p)?;
    Ok(PixelWeights(pdf_parts(x, p).1))
}

struct IdfParts {
    h: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
    norm: NormCache,
    wh: Vec<f64>,
}

fn idf_parts(x: &Tensor, p: &LdyParams) -> IdfParts {
    let h = temporal_mean(x);
    let z = dense(&h, &p.idf_fc1_w, &p.idf_fc1_b);
    let (u, norm) = feature_norm_cached(&z, &p.norm_idf);
    let r: Vec<f64> = u.iter().map(|v| v.max(0.0)).collect();
    let wh = dense(&r, &p.idf_fc2_w, &p.idf_fc2_b);
    IdfParts { h, u, r, norm, wh }
}

/// Instance branch: `relu(norm(mean_t(x) W1 + b1)) W2 + b2`.
pub fn idf_forward(x: &Tensor, p: &LdyParams) -> Result<DirectionVector> {
    check_input(x, p)?;
    Ok(DirectionVector(idf_parts(x, p).wh))
}

pub fn compose_kernels(wp: &PixelWeights, wh: &DirectionVector) -> DynamicKernels {
    let n = wp.0.len();
    let k = wh.0.len();
    let mut out = Tensor::zeros(&[n, k]);
    for (i, &w) in wp.0.data().iter().enumerate() {
        for (j, &d) in wh.0.iter().enumerate() {
            *out.at_mut(i, j) = w * d;
        }
    }
    DynamicKernels(out)
}

/// Convolution where output pixel `i` uses kernel row `i`, before normalization.
pub fn dynamic_conv_prenorm(x: &Tensor, kernels: &DynamicKernels) -> Result<Tensor> {
    let (rows, cols) = (x.rows(), x.cols());
    kernels
        .0
        .ensure_shape("dynamic_conv kernels", &[rows * cols, TAPS])?;
    let mut out = Tensor::zeros(&[rows, cols]);
    for t in 0..rows {
        for f in 0..cols {
            let row = kernels.0.row(t * cols + f);
            let mut acc = 0.0;
            for (k, w) in row.iter().enumerate() {
                if let Some(v) = patch_value(x, t, f, k) {
                    acc += w * v;
                }
            }
            *out.at_mut(t, f) = acc;
        }
    }
    Ok(out)
}

pub fn dynamic_conv(x: &Tensor, kernels: &DynamicKernels, norm_out: &Affine) -> Result<Tensor> {
    Ok(temporal_norm(&dynamic_conv_prenorm(x, kernels)?, norm_out))
}

/// Same arithmetic as `dynamic_conv_prenorm(x, compose_kernels(wp, wh))`, but
/// each kernel row is formed on the fly so only `N + K` weights are stored.
fn dynamic_conv_streaming(x: &Tensor, wp: &Tensor, wh: &[f64]) -> Tensor {
    let (rows, cols) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[rows, cols]);
    let mut kernel = [0.0; TAPS];
    for t in 0..rows {
        for f in 0..cols {
            let s = wp.at(t, f);
            for (kk, d) in kernel.iter_mut().zip(wh) {
                *kk = s * d;
            }
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                if let Some(v) = patch_value(x, t, f, k) {
                    acc += w * v;
                }
            }
            *out.at_mut(t, f) = acc;
        }
    }
    out
}

/// Intermediates of one forward pass.
#[derive(Clone, Debug)]
pub struct LdyCache {
    x: Tensor,
    fingerprint: u64,
    pdf_norm: NormCache,
    wp: Tensor,
    h: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
    idf_norm: NormCache,
    wh: Vec<f64>,
    out_norm: NormCache,
}

impl LdyCache {
    pub fn pixel_weights(&self) -> PixelWeights {
        PixelWeights(self.wp.clone())
    }

    pub fn direction(&self) -> DirectionVector {
        DirectionVector(self.wh.clone())
    }
}

/// `x + norm_out(dynamic_conv(x))`, returning the cache for [`ldy_backward`].
pub fn ldy_forward(x: &Tensor, p: &LdyParams) -> Result<(Tensor, LdyCache)> {
    check_input(x, p)?;
    let (pdf_norm, wp) = pdf_parts(x, p);
    let idf = idf_parts(x, p);
    let pre = dynamic_conv_streaming(x, &wp, &idf.wh);
    let (mut out, out_norm) = temporal_norm_cached(&pre, &p.norm_out);
    out.add_assign(x);
    let cache = LdyCache {
        x: x.clone(),
        fingerprint: p.fingerprint(),
        pdf_norm,
        wp,
        h: idf.h,
        u: idf.u,
        r: idf.r,
        idf_norm: idf.norm,
        wh: idf.wh,
        out_norm,
    };
    Ok((out, cache))
}

/// Gradients with respect to the input and every parameter.
pub fn ldy_backward(p: &LdyParams, cache: &LdyCache, upstream: &Tensor) -> Result<(Tensor, LdyParams)> {
    upstream.ensure_shape("ldy_backward upstream", cache.x.shape())?;
    if cache.fingerprint != p.fingerprint() {
        return Err(Error::Contract(
            "ldy_backward: cache was produced with different parameters".into(),
        ));
    }
    let x = &cache.x;
    let (rows, cols) = (x.rows(), x.cols());

    // Skip connection.
    let mut dx = upstream.clone();

    // Output norm.
    let (dpre, d_out_alpha, d_out_beta) = temporal_norm_backward(upstream, &cache.out_norm, &p.norm_out);

    // pre[i] = wp[i] * <wh, patch_i>
    let s = static_conv(x, &cache.wh);
    let mut dwp = Tensor::zeros(&[rows, cols]);
    let mut ds = Tensor::zeros(&[rows, cols]);
    for i in 0..rows * cols {
        dwp.data_mut()[i] = dpre.data()[i] * s.data()[i];
        ds.data_mut()[i] = dpre.data()[i] * cache.wp.data()[i];
    }
    let dwh = static_conv_kernel_grad(x, &ds);
    conv_input_grad_into(&mut dx, &ds, |_, _, k| cache.wh[k]);

    // Pixel branch.
    let dn = Tensor::from_vec(
        &[rows, cols],
        dwp.data()
            .iter()
            .zip(cache.wp.data())
            .map(|(g, w)| g * w * (1.0 - w))
            .collect(),
    )?;
    let (dc, d_pdf_alpha, d_pdf_beta) = temporal_norm_backward(&dn, &cache.pdf_norm, &p.norm_pdf);
    let d_kernel = static_conv_kernel_grad(x, &dc);
    let kernel = p.pdf_kernel.data();
    conv_input_grad_into(&mut dx, &dc, |_, _, k| kernel[k]);

    // Instance branch.
    let (dr, d_fc2_w, d_fc2_b) = dense_backward(&cache.r, &p.idf_fc2_w, &dwh);
    let du: Vec<f64> = dr
        .iter()
        .zip(&cache.u)
        .map(|(g, &u)| if u > 0.0 { *g } else { 0.0 })
        .collect();
    let (dz, d_idf_alpha, d_idf_beta) = feature_norm_backward(&du, &cache.idf_norm, &p.norm_idf);
    let (dh, d_fc1_w, d_fc1_b) = dense_backward(&cache.h, &p.idf_fc1_w, &dz);
    for t in 0..rows {
        for f in 0..cols {
            *dx.at_mut(t, f) += dh[f] / rows as f64;
        }
    }

    let grads = LdyParams {
        pdf_kernel: Tensor::from_vec(&[KERNEL_SIDE, KERNEL_SIDE], d_kernel)?,
        idf_fc1_w: d_fc1_w,
        idf_fc1_b: d_fc1_b,
        idf_fc2_w: d_fc2_w,
        idf_fc2_b: d_fc2_b,
        norm_pdf: Affine {
            alpha: d_pdf_alpha,
            beta: d_pdf_beta,
        },
        norm_idf: Affine {
            alpha: d_idf_alpha,
            beta: d_idf_beta,
        },
        norm_out: Affine {
            alpha: d_out_alpha,
            beta: d_out_beta,
        },
    };
    Ok((dx, grads))
}
