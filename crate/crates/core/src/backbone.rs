//! "TENet-lite": a small temporal-convolution classifier over `[T, F]`
//! features, treating the F coefficients as channels along time.
//!
//! Layout: stem conv (kernel 3) F -> C, then `blocks` inverted-residual blocks
//! of pointwise -> depthwise temporal (kernel 9) -> pointwise, each followed by
//! a per-sample temporal norm, ReLU between, identity residual when the block
//! keeps its length. Blocks `0, 3, 6, ...` use stride 2. Global average pool
//! over time and a linear head produce the class logits.
//!
//! Convolutions feeding a norm carry no bias; the norm's beta absorbs it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldy::norm::{temporal_norm_backward, temporal_norm_cached, Affine, NormCache};
use crate::numeric::{ParamSet, Tensor};

pub const STEM_KERNEL: usize = 3;
pub const TEMPORAL_KERNEL: usize = 9;
pub const NUM_CLASSES: usize = 12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub blocks: usize,
    pub channels: usize,
    pub classes: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            blocks: 6,
            channels: 16,
            classes: NUM_CLASSES,
        }
    }
}

impl BackboneConfig {
    pub fn stride(&self, block: usize) -> usize {
        if block % 3 == 0 {
            2
        } else {
            1
        }
    }

    /// Time length after the stem and every block, for an input of `t` frames.
    pub fn lengths(&self, t: usize) -> Vec<usize> {
        let mut out = vec![t];
        let mut cur = t;
        for b in 0..self.blocks {
            cur = (cur - 1) / self.stride(b) + 1;
            out.push(cur);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// `[C, C]`
    pub pw_in: Tensor,
    pub norm_in: Affine,
    /// `[TEMPORAL_KERNEL, C]`
    pub depthwise: Tensor,
    pub norm_dw: Affine,
    /// `[C, C]`
    pub pw_out: Tensor,
    pub norm_out: Affine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    /// `[STEM_KERNEL, F, C]`
    pub stem: Tensor,
    pub stem_norm: Affine,
    pub blocks: Vec<Block>,
    /// `[C, classes]`
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl BackboneParams {
    pub fn init<R: Rng + ?Sized>(freq: usize, config: &BackboneConfig, rng: &mut R) -> Self {
        let c = config.channels;
        let bound = |fan_in: usize| (1.0 / fan_in as f64).sqrt();
        let blocks = (0..config.blocks)
            .map(|_| Block {
                pw_in: Tensor::uniform(&[c, c], bound(c), rng),
                norm_in: Affine::identity(c),
                depthwise: Tensor::uniform(&[TEMPORAL_KERNEL, c], bound(TEMPORAL_KERNEL), rng),
                norm_dw: Affine::identity(c),
                pw_out: Tensor::uniform(&[c, c], bound(c), rng),
                norm_out: Affine::identity(c),
            })
            .collect();
        Self {
            config: config.clone(),
            stem: Tensor::uniform(&[STEM_KERNEL, freq, c], bound(STEM_KERNEL * freq), rng),
            stem_norm: Affine::identity(c),
            blocks,
            head_w: Tensor::uniform(&[c, config.classes], bound(c), rng),
            head_b: Tensor::zeros(&[config.classes]),
        }
    }

    /// Random weights, alphas of magnitude 0.5..1.5 and small betas, so no
    /// ReLU is pinned open or shut; used by gradient checks.
    pub fn random<R: Rng + ?Sized>(freq: usize, config: &BackboneConfig, rng: &mut R) -> Self {
        let mut p = Self::init(freq, config, rng);
        for (name, t) in p.tensors_mut() {
            for v in t.data_mut() {
                *v = if name.ends_with(".alpha") {
                    rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }
                } else if name.ends_with(".beta") {
                    rng.gen_range(-0.1..0.1)
                } else {
                    rng.gen_range(-1.0..1.0)
                };
            }
        }
        p
    }

    pub fn freq(&self) -> usize {
        self.stem.shape()[1]
    }
}

impl ParamSet for BackboneParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![
            ("backbone.stem".to_string(), &self.stem),
            ("backbone.stem_norm.alpha".to_string(), &self.stem_norm.alpha),
            ("backbone.stem_norm.beta".to_string(), &self.stem_norm.beta),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("backbone.block{i}");
            v.push((format!("{p}.pw_in"), &b.pw_in));
            v.push((format!("{p}.norm_in.alpha"), &b.norm_in.alpha));
            v.push((format!("{p}.norm_in.beta"), &b.norm_in.beta));
            v.push((format!("{p}.depthwise"), &b.depthwise));
            v.push((format!("{p}.norm_dw.alpha"), &b.norm_dw.alpha));
            v.push((format!("{p}.norm_dw.beta"), &b.norm_dw.beta));
            v.push((format!("{p}.pw_out"), &b.pw_out));
            v.push((format!("{p}.norm_out.alpha"), &b.norm_out.alpha));
            v.push((format!("{p}.norm_out.beta"), &b.norm_out.beta));
        }
        v.push(("backbone.head_w".to_string(), &self.head_w));
        v.push(("backbone.head_b".to_string(), &self.head_b));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = vec![
            ("backbone.stem".to_string(), &mut self.stem),
            ("backbone.stem_norm.alpha".to_string(), &mut self.stem_norm.alpha),
            ("backbone.stem_norm.beta".to_string(), &mut self.stem_norm.beta),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("backbone.block{i}");
            v.push((format!("{p}.pw_in"), &mut b.pw_in));
            v.push((format!("{p}.norm_in.alpha"), &mut b.norm_in.alpha));
            v.push((format!("{p}.norm_in.beta"), &mut b.norm_in.beta));
            v.push((format!("{p}.depthwise"), &mut b.depthwise));
            v.push((format!("{p}.norm_dw.alpha"), &mut b.norm_dw.alpha));
            v.push((format!("{p}.norm_dw.beta"), &mut b.norm_dw.beta));
            v.push((format!("{p}.pw_out"), &mut b.pw_out));
            v.push((format!("{p}.norm_out.alpha"), &mut b.norm_out.alpha));
            v.push((format!("{p}.norm_out.beta"), &mut b.norm_out.beta));
        }
        v.push(("backbone.head_w".to_string(), &mut self.head_w));
        v.push(("backbone.head_b".to_string(), &mut self.head_b));
        v
    }
}

fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

fn relu_backward(dy: &Tensor, pre: &Tensor) -> Tensor {
    let data = dy
        .data()
        .iter()
        .zip(pre.data())
        .map(|(g, &p)| if p > 0.0 { *g } else { 0.0 })
        .collect();
    Tensor::from_vec(dy.shape(), data).expect("same shape")
}

/// `[T, F] x [K, F, C] -> [T, C]`, stride 1, zero padding `K / 2`.
fn stem_conv(x: &Tensor, w: &Tensor) -> Tensor {
    let (t_len, f_len) = (x.rows(), x.cols());
    let (k_len, c_len) = (w.shape()[0], w.shape()[2]);
    let pad = (k_len / 2) as isize;
    let wd = w.data();
    let mut out = Tensor::zeros(&[t_len, c_len]);
    for t in 0..t_len {
        for j in 0..k_len {
            let src = t as isize + j as isize - pad;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let xr = x.row(src as usize);
            for (i, &xv) in xr.iter().enumerate() {
                let base = (j * f_len + i) * c_len;
                for c in 0..c_len {
                    *out.at_mut(t, c) += xv * wd[base + c];
                }
            }
        }
    }
    out
}

fn stem_conv_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let (t_len, f_len) = (x.rows(), x.cols());
    let (k_len, c_len) = (w.shape()[0], w.shape()[2]);
    let pad = (k_len / 2) as isize;
    let wd = w.data();
    let mut dx = Tensor::zeros(&[t_len, f_len]);
    let mut dw = Tensor::zeros(w.shape());
    for t in 0..t_len {
        let g = dy.row(t);
        for j in 0..k_len {
            let src = t as isize + j as isize - pad;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let s = src as usize;
            for i in 0..f_len {
                let base = (j * f_len + i) * c_len;
                let xv = x.at(s, i);
                let mut acc = 0.0;
                for c in 0..c_len {
                    acc += g[c] * wd[base + c];
                    dw.data_mut()[base + c] += g[c] * xv;
                }
                *dx.at_mut(s, i) += acc;
            }
        }
    }
    (dx, dw)
}

/// `[T, Cin] x [Cin, Cout]`.
fn pointwise(x: &Tensor, w: &Tensor) -> Tensor {
    let (t_len, c_in, c_out) = (x.rows(), w.rows(), w.cols());
    let mut out = Tensor::zeros(&[t_len, c_out]);
    for t in 0..t_len {
        for i in 0..c_in {
            let xv = x.at(t, i);
            for o in 0..c_out {
                *out.at_mut(t, o) += xv * w.at(i, o);
            }
        }
    }
    out
}

fn pointwise_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let (t_len, c_in, c_out) = (x.rows(), w.rows(), w.cols());
    let mut dx = Tensor::zeros(&[t_len, c_in]);
    let mut dw = Tensor::zeros(&[c_in, c_out]);
    for t in 0..t_len {
        for i in 0..c_in {
            let xv = x.at(t, i);
            let mut acc = 0.0;
            for o in 0..c_out {
                let g = dy.at(t, o);
                acc += g * w.at(i, o);
                *dw.at_mut(i, o) += g * xv;
            }
            *dx.at_mut(t, i) = acc;
        }
    }
    (dx, dw)
}

/// Per-channel temporal conv, kernel `[K, C]`, zero padding `K / 2`.
fn depthwise(x: &Tensor, w: &Tensor, stride: usize) -> Tensor {
    let (t_len, c_len) = (x.rows(), x.cols());
    let k_len = w.rows();
    let pad = (k_len / 2) as isize;
    let t_out = (t_len - 1) / stride + 1;
    let mut out = Tensor::zeros(&[t_out, c_len]);
    for t in 0..t_out {
        for j in 0..k_len {
            let src = (t * stride) as isize + j as isize - pad;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            for c in 0..c_len {
                *out.at_mut(t, c) += x.at(src as usize, c) * w.at(j, c);
            }
        }
    }
    out
}

fn depthwise_backward(x: &Tensor, w: &Tensor, stride: usize, dy: &Tensor) -> (Tensor, Tensor) {
    let (t_len, c_len) = (x.rows(), x.cols());
    let k_len = w.rows();
    let pad = (k_len / 2) as isize;
    let mut dx = Tensor::zeros(&[t_len, c_len]);
    let mut dw = Tensor::zeros(&[k_len, c_len]);
    for t in 0..dy.rows() {
        for j in 0..k_len {
            let src = (t * stride) as isize + j as isize - pad;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let s = src as usize;
            for c in 0..c_len {
                let g = dy.at(t, c);
                *dx.at_mut(s, c) += g * w.at(j, c);
                *dw.at_mut(j, c) += g * x.at(s, c);
            }
        }
    }
    (dx, dw)
}

#[derive(Clone, Debug)]
struct BlockCache {
    input: Tensor,
    n1_pre: Tensor,
    n1: NormCache,
    r1: Tensor,
    n2_pre: Tensor,
    n2: NormCache,
    r2: Tensor,
    n3: NormCache,
    out_pre: Tensor,
    residual: bool,
}

#[derive(Clone, Debug)]
pub struct BackboneCache {
    x: Tensor,
    stem_norm: NormCache,
    stem_pre: Tensor,
    blocks: Vec<BlockCache>,
    last: Tensor,
}

pub fn backbone_forward(x: &Tensor, p: &BackboneParams) -> Result<(Vec<f64>, BackboneCache)> {
    if x.shape().len() != 2 || x.rows() == 0 || x.cols() != p.freq() {
        return Err(Error::Shape {
            op: "backbone input",
            expected: vec![x.shape().first().copied().unwrap_or(0).max(1), p.freq()],
            actual: x.shape().to_vec(),
        });
    }
    let (stem_pre, stem_norm) = temporal_norm_cached(&stem_conv(x, &p.stem), &p.stem_norm);
    let mut h = relu(&stem_pre);
    let mut caches = Vec::with_capacity(p.blocks.len());
    for (i, b) in p.blocks.iter().enumerate() {
        let stride = p.config.stride(i);
        let (n1_pre, n1) = temporal_norm_cached(&pointwise(&h, &b.pw_in), &b.norm_in);
        let r1 = relu(&n1_pre);
        let (n2_pre, n2) = temporal_norm_cached(&depthwise(&r1, &b.depthwise, stride), &b.norm_dw);
        let r2 = relu(&n2_pre);
        let (mut out_pre, n3) = temporal_norm_cached(&pointwise(&r2, &b.pw_out), &b.norm_out);
        let residual = out_pre.shape() == h.shape();
        if residual {
            out_pre.add_assign(&h);
        }
        let next = relu(&out_pre);
        caches.push(BlockCache {
            input: h,
            n1_pre,
            n1,
            r1,
            n2_pre,
            n2,
            r2,
            n3,
            out_pre,
            residual,
        });
        h = next;
    }
    let pooled: Vec<f64> = crate::ldy::temporal_mean(&h);
    let mut logits = p.head_b.data().to_vec();
    for (c, &v) in pooled.iter().enumerate() {
        for (k, l) in logits.iter_mut().enumerate() {
            *l += v * p.head_w.at(c, k);
        }
    }
    Ok((
        logits,
        BackboneCache {
            x: x.clone(),
            stem_norm,
            stem_pre,
            blocks: caches,
            last: h,
        },
    ))
}

pub fn backbone_backward(
    p: &BackboneParams,
    cache: &BackboneCache,
    grad_logits: &[f64],
) -> Result<(Tensor, BackboneParams)> {
    if grad_logits.len() != p.config.classes || cache.blocks.len() != p.blocks.len() {
        return Err(Error::Contract(
            "backbone_backward: cache does not match parameters".into(),
        ));
    }
    let mut grads = p.zeros_like();
    let last = &cache.last;
    let (t_len, c_len) = (last.rows(), last.cols());
    let pooled = crate::ldy::temporal_mean(last);
    let mut dpool = vec![0.0; c_len];
    for c in 0..c_len {
        for (k, &g) in grad_logits.iter().enumerate() {
            *grads.head_w.at_mut(c, k) = pooled[c] * g;
            dpool[c] += p.head_w.at(c, k) * g;
        }
    }
    grads.head_b.data_mut().copy_from_slice(grad_logits);
    let mut dh = Tensor::zeros(&[t_len, c_len]);
    for t in 0..t_len {
        for c in 0..c_len {
            *dh.at_mut(t, c) = dpool[c] / t_len as f64;
        }
    }

    for (i, (b, bc)) in p.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let stride = p.config.stride(i);
        let d_out = relu_backward(&dh, &bc.out_pre);
        let (d_p3, da3, db3) = temporal_norm_backward(&d_out, &bc.n3, &b.norm_out);
        let (d_r2, d_pw_out) = pointwise_backward(&bc.r2, &b.pw_out, &d_p3);
        let d_n2 = relu_backward(&d_r2, &bc.n2_pre);
        let (d_dw_out, da2, db2) = temporal_norm_backward(&d_n2, &bc.n2, &b.norm_dw);
        let (d_r1, d_dw) = depthwise_backward(&bc.r1, &b.depthwise, stride, &d_dw_out);
        let d_n1 = relu_backward(&d_r1, &bc.n1_pre);
        let (d_p1, da1, db1) = temporal_norm_backward(&d_n1, &bc.n1, &b.norm_in);
        let (mut d_in, d_pw_in) = pointwise_backward(&bc.input, &b.pw_in, &d_p1);
        if bc.residual {
            d_in.add_assign(&d_out);
        }
        let g = &mut grads.blocks[i];
        g.pw_in = d_pw_in;
        g.norm_in = Affine { alpha: da1, beta: db1 };
        g.depthwise = d_dw;
        g.norm_dw = Affine { alpha: da2, beta: db2 };
        g.pw_out = d_pw_out;
        g.norm_out = Affine { alpha: da3, beta: db3 };
        dh = d_in;
    }

    let d_stem = relu_backward(&dh, &cache.stem_pre);
    let (d_conv, da, db) = temporal_norm_backward(&d_stem, &cache.stem_norm, &p.stem_norm);
    let (dx, d_stem_w) = stem_conv_backward(&cache.x, &p.stem, &d_conv);
    grads.stem = d_stem_w;
    grads.stem_norm = Affine { alpha: da, beta: db };
    Ok((dx, grads))
}

/// Softmax cross-entropy. Returns the loss and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}
