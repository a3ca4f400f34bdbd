//! A conventional patch-level dynamic convolution, instrumented, as the
//! reference point for the factorized kernel path.

use rand::Rng;

use super::CostReport;
use crate::error::{Error, Result};
use crate::ldy::{DirectionVector, DynamicKernels, PixelWeights};
use crate::numeric::Tensor;
use crate::rng::stream;

#[derive(Clone, Debug)]
pub struct DyConvRun {
    pub output: Tensor,
    /// One generated kernel per pixel, `[N, K]`.
    pub kernels: Tensor,
    /// Kernel generation: a dense `K x K` map of each zero-padded patch.
    pub generator: CostReport,
    /// Applying the generated kernels.
    pub application: CostReport,
}

impl DyConvRun {
    pub fn total(&self) -> CostReport {
        self.generator + self.application
    }
}

fn odd_side(k: usize) -> Result<usize> {
    let s = (k as f64).sqrt().round() as usize;
    if s * s != k || s % 2 == 0 {
        return Err(Error::Contract(format!("kernel size {k} is not an odd square")));
    }
    Ok(s)
}

/// Per-pixel kernels `w_i = G p_i` from the dilated `K`-tap patch `p_i`, then
/// `y_i = w_i . p_i`. `G` is drawn from `seed`. Padding taps are zeros and
/// are still multiplied, as a dense generator would.
pub fn dyconv_oracle(x: &Tensor, k: usize, seed: u64) -> Result<DyConvRun> {
    let side = odd_side(k)?;
    if !x.all_finite() {
        return Err(Error::NonFinite {
            context: "dyconv_oracle input".into(),
        });
    }
    let half = (side / 2) as isize;
    let offsets: Vec<(isize, isize)> = (0..k)
        .map(|j| (2 * ((j / side) as isize - half), 2 * ((j % side) as isize - half)))
        .collect();
    let mut rng = stream(seed, &[k as u64]);
    let bound = 1.0 / (k as f64).sqrt();
    let g: Vec<f64> = (0..k * k).map(|_| rng.gen_range(-bound..bound)).collect();

    let (rows, cols) = (x.rows(), x.cols());
    let n = rows * cols;
    let mut kernels = Tensor::zeros(&[n, k]);
    let mut output = Tensor::zeros(&[rows, cols]);
    let (mut gen_m, mut gen_a, mut app_m, mut app_a) = (0u64, 0u64, 0u64, 0u64);
    let mut patch = vec![0.0; k];
    for t in 0..rows {
        for f in 0..cols {
            for (p, &(dt, df)) in patch.iter_mut().zip(&offsets) {
                let (a, b) = (t as isize + dt, f as isize + df);
                *p = if (0..rows as isize).contains(&a) && (0..cols as isize).contains(&b) {
                    x.at(a as usize, b as usize)
                } else {
                    0.0
                };
            }
            let i = t * cols + f;
            for o in 0..k {
                let mut acc = g[o * k] * patch[0];
                gen_m += 1;
                for j in 1..k {
                    acc += g[o * k + j] * patch[j];
                    gen_m += 1;
                    gen_a += 1;
                }
                *kernels.at_mut(i, o) = acc;
            }
            let w = kernels.row(i);
            let mut acc = w[0] * patch[0];
            app_m += 1;
            for j in 1..k {
                acc += w[j] * patch[j];
                app_m += 1;
                app_a += 1;
            }
            *output.at_mut(t, f) = acc;
        }
    }
    let kn = (k * n) as u64;
    Ok(DyConvRun {
        output,
        kernels,
        generator: CostReport::new((k * k) as u64, gen_m, gen_a, kn),
        application: CostReport::new(0, app_m, app_a, kn),
    })
}

/// The factorized kernel path, `kernel_i = wp_i * wh`, counted as it runs.
/// Holds only the `N` pixel weights and `K` direction values.
pub fn ldy_kernel_path(wp: &PixelWeights, wh: &DirectionVector) -> (DynamicKernels, CostReport) {
    let (n, k) = (wp.0.len(), wh.0.len());
    let mut out = Tensor::zeros(&[n, k]);
    let mut mults = 0u64;
    for (i, &s) in wp.0.data().iter().enumerate() {
        for (j, &d) in wh.0.iter().enumerate() {
            *out.at_mut(i, j) = s * d;
            mults += 1;
        }
    }
    (DynamicKernels(out), CostReport::new(0, mults, 0, (n + k) as u64))
}
