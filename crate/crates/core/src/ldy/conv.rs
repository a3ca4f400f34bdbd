//! Single-channel 3x3 convolution dilated by 2 in both axes, stride 1, zero
//! padding 2 (shape preserving). Taps are row-major: tap `a*3 + b` reads
//! `x[t + 2(a-1), f + 2(b-1)]`. Out-of-range taps contribute nothing.

use crate::numeric::Tensor;

pub const KERNEL_SIDE: usize = 3;
pub const TAPS: usize = KERNEL_SIDE * KERNEL_SIDE;
pub const DILATION: isize = 2;

#[inline]
pub fn tap_offset(k: usize) -> (isize, isize) {
    let a = (k / KERNEL_SIDE) as isize - 1;
    let b = (k % KERNEL_SIDE) as isize - 1;
    (a * DILATION, b * DILATION)
}

/// Value of tap `k` of the zero-padded patch centred at `(t, f)`.
#[inline]
pub fn patch_value(x: &Tensor, t: usize, f: usize, k: usize) -> Option<f64> {
    let (dt, df) = tap_offset(k);
    let tt = t as isize + dt;
    let ff = f as isize + df;
    if tt < 0 || ff < 0 || tt >= x.rows() as isize || ff >= x.cols() as isize {
        None
    } else {
        Some(x.at(tt as usize, ff as usize))
    }
}

/// Static dilated convolution with a `TAPS`-long kernel.
pub fn static_conv(x: &Tensor, kernel: &[f64]) -> Tensor {
    debug_assert_eq!(kernel.len(), TAPS);
    let (rows, cols) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[rows, cols]);
    for t in 0..rows {
        for f in 0..cols {
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

/// Gradient of `sum(dy * static_conv(x, w))` with respect to `w`.
pub fn static_conv_kernel_grad(x: &Tensor, dy: &Tensor) -> Vec<f64> {
    let mut g = vec![0.0; TAPS];
    for t in 0..x.rows() {
        for f in 0..x.cols() {
            let d = dy.at(t, f);
            for (k, gk) in g.iter_mut().enumerate() {
                if let Some(v) = patch_value(x, t, f, k) {
                    *gk += d * v;
                }
            }
        }
    }
    g
}

/// Gradient with respect to the input when output pixel `i` used kernel row
/// `kernel_at(i)`; adds into `dx`.
pub fn conv_input_grad_into(dx: &mut Tensor, dy: &Tensor, kernel_at: impl Fn(usize, usize, usize) -> f64) {
    let (rows, cols) = (dy.rows(), dy.cols());
    for t in 0..rows {
        for f in 0..cols {
            let d = dy.at(t, f);
            if d == 0.0 {
                continue;
            }
            for k in 0..TAPS {
                let (dt, df) = tap_offset(k);
                let tt = t as isize + dt;
                let ff = f as isize + df;
                if tt >= 0 && ff >= 0 && tt < rows as isize && ff < cols as isize {
                    *dx.at_mut(tt as usize, ff as usize) += d * kernel_at(t, f, k);
                }
            }
        }
    }
}
