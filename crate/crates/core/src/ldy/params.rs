use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{KERNEL_SIDE, TAPS};
use super::norm::Affine;
use crate::numeric::{ParamSet, Tensor};

/// How the front-end is initialized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LdyInit {
    /// Uniform `±sqrt(1/fan_in)` weights, zero biases, identity affines.
    #[default]
    Standard,
    /// As `Standard` but the output affine is zeroed, so the front-end starts
    /// as an exact identity and still receives gradient through `alpha_out`.
    ZeroResidual,
}

/// Every trainable tensor of the dynamic-convolution front-end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdyParams {
    /// `[3, 3]`, no bias.
    pub pdf_kernel: Tensor,
    /// `[F, F]`, indexed `[in, out]`.
    pub idf_fc1_w: Tensor,
    pub idf_fc1_b: Tensor,
    /// `[F, K]`, indexed `[in, tap]`.
    pub idf_fc2_w: Tensor,
    pub idf_fc2_b: Tensor,
    pub norm_pdf: Affine,
    pub norm_idf: Affine,
    pub norm_out: Affine,
}

impl LdyParams {
    pub fn init<R: Rng + ?Sized>(freq: usize, scheme: LdyInit, rng: &mut R) -> Self {
        let mut p = Self {
            pdf_kernel: Tensor::uniform(&[KERNEL_SIDE, KERNEL_SIDE], (1.0 / TAPS as f64).sqrt(), rng),
            idf_fc1_w: Tensor::uniform(&[freq, freq], (1.0 / freq as f64).sqrt(), rng),
            idf_fc1_b: Tensor::zeros(&[freq]),
            idf_fc2_w: Tensor::uniform(&[freq, TAPS], (1.0 / freq as f64).sqrt(), rng),
            idf_fc2_b: Tensor::zeros(&[TAPS]),
            norm_pdf: Affine::identity(freq),
            norm_idf: Affine::identity(freq),
            norm_out: Affine::identity(freq),
        };
        if scheme == LdyInit::ZeroResidual {
            p.norm_out.alpha.data_mut().fill(0.0);
        }
        p
    }

    /// PDF kernel and the whole IDF zeroed, identity affines: the dynamic
    /// branch outputs exactly `beta_out`.
    pub fn zeroed_branch(freq: usize) -> Self {
        Self {
            pdf_kernel: Tensor::zeros(&[KERNEL_SIDE, KERNEL_SIDE]),
            idf_fc1_w: Tensor::zeros(&[freq, freq]),
            idf_fc1_b: Tensor::zeros(&[freq]),
            idf_fc2_w: Tensor::zeros(&[freq, TAPS]),
            idf_fc2_b: Tensor::zeros(&[TAPS]),
            norm_pdf: Affine::identity(freq),
            norm_idf: Affine::identity(freq),
            norm_out: Affine::identity(freq),
        }
    }

    /// Random weights, alphas of magnitude 0.5..1.5 and small betas, so no
    /// ReLU is pinned open or shut; used by gradient checks.
    pub fn random<R: Rng + ?Sized>(freq: usize, rng: &mut R) -> Self {
        let mut p = Self::init(freq, LdyInit::Standard, rng);
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
        self.idf_fc1_b.len()
    }

    /// Cheap identity of the current parameter values, stored in forward caches.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.tensors() {
            for v in t.data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

impl ParamSet for LdyParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("ldy.pdf_kernel".into(), &self.pdf_kernel),
            ("ldy.idf_fc1_w".into(), &self.idf_fc1_w),
            ("ldy.idf_fc1_b".into(), &self.idf_fc1_b),
            ("ldy.idf_fc2_w".into(), &self.idf_fc2_w),
            ("ldy.idf_fc2_b".into(), &self.idf_fc2_b),
            ("ldy.norm_pdf.alpha".into(), &self.norm_pdf.alpha),
            ("ldy.norm_pdf.beta".into(), &self.norm_pdf.beta),
            ("ldy.norm_idf.alpha".into(), &self.norm_idf.alpha),
            ("ldy.norm_idf.beta".into(), &self.norm_idf.beta),
            ("ldy.norm_out.alpha".into(), &self.norm_out.alpha),
            ("ldy.norm_out.beta".into(), &self.norm_out.beta),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("ldy.pdf_kernel".into(), &mut self.pdf_kernel),
            ("ldy.idf_fc1_w".into(), &mut self.idf_fc1_w),
            ("ldy.idf_fc1_b".into(), &mut self.idf_fc1_b),
            ("ldy.idf_fc2_w".into(), &mut self.idf_fc2_w),
            ("ldy.idf_fc2_b".into(), &mut self.idf_fc2_b),
            ("ldy.norm_pdf.alpha".into(), &mut self.norm_pdf.alpha),
            ("ldy.norm_pdf.beta".into(), &mut self.norm_pdf.beta),
            ("ldy.norm_idf.alpha".into(), &mut self.norm_idf.alpha),
            ("ldy.norm_idf.beta".into(), &mut self.norm_idf.beta),
            ("ldy.norm_out.alpha".into(), &mut self.norm_out.alpha),
            ("ldy.norm_out.beta".into(), &mut self.norm_out.beta),
        ]
    }
}
