//! MFCC front-end: 30 ms periodic-Hann frames every 10 ms, 512-point FFT power
//! spectrum, 64 HTK-mel triangular filters over 20 Hz to 8 kHz, natural log with
//! a floor, orthonormal DCT-II.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, FeatureMap};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub n_coeffs: usize,
    pub log_floor: f64,
    /// Keep cepstral coefficients 1..=n_coeffs instead of 0..n_coeffs.
    pub skip_c0: bool,
    /// Shorter clips are zero-padded to this many samples.
    pub min_samples: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_len: 480,
            hop: 160,
            n_fft: 512,
            n_mels: 64,
            f_min: 20.0,
            f_max: 8000.0,
            n_coeffs: 40,
            log_floor: 1e-10,
            skip_c0: false,
            min_samples: 16_000,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        let extra = usize::from(self.skip_c0);
        if self.frame_len == 0 || self.hop == 0 || self.frame_len > self.n_fft {
            return Err(Error::Config("mfcc: need 0 < frame_len <= n_fft and hop > 0".into()));
        }
        if self.n_coeffs + extra > self.n_mels || self.n_coeffs == 0 {
            return Err(Error::Config("mfcc: n_coeffs must be in 1..=n_mels".into()));
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max && self.f_max <= f64::from(self.sample_rate) / 2.0) {
            return Err(Error::Config("mfcc: need 0 <= f_min < f_max <= nyquist".into()));
        }
        Ok(())
    }

    pub fn frames_for(&self, len: usize) -> usize {
        let len = len.max(self.min_samples);
        1 + (len - self.frame_len) / self.hop
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Reusable extractor holding the FFT plan, window, filterbank and DCT basis.
pub struct Mfcc {
    cfg: MfccConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// `[n_mels][n_fft/2 + 1]`
    filters: Vec<Vec<f64>>,
    /// `[n_coeffs][n_mels]`
    dct: Vec<Vec<f64>>,
}

impl Mfcc {
    pub fn new(cfg: MfccConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        let window = (0..cfg.frame_len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / cfg.frame_len as f64).cos())
            .collect();

        let n_bins = cfg.n_fft / 2 + 1;
        let (mel_lo, mel_hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = f64::from(cfg.sample_rate) / cfg.n_fft as f64;
        let filters = (0..cfg.n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();

        let first = usize::from(cfg.skip_c0);
        let m = cfg.n_mels as f64;
        let dct = (first..first + cfg.n_coeffs)
            .map(|j| {
                let s = if j == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                (0..cfg.n_mels)
                    .map(|i| s * (PI * j as f64 * (i as f64 + 0.5) / m).cos())
                    .collect()
            })
            .collect();

        Ok(Self {
            cfg,
            fft,
            window,
            filters,
            dct,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<FeatureMap> {
        let cfg = &self.cfg;
        if clip.sample_rate != cfg.sample_rate {
            return Err(Error::Format(format!(
                "clip sample rate {} does not match extractor rate {}",
                clip.sample_rate, cfg.sample_rate
            )));
        }
        if clip.len() < cfg.frame_len {
            return Err(Error::TooShort {
                len: clip.len(),
                min: cfg.frame_len,
            });
        }
        let mut samples = clip.samples.clone();
        if samples.len() < cfg.min_samples {
            samples.resize(cfg.min_samples, 0.0);
        }

        let frames = 1 + (samples.len() - cfg.frame_len) / cfg.hop;
        let n_bins = cfg.n_fft / 2 + 1;
        let mut out = Tensor::zeros(&[frames, cfg.n_coeffs]);
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        let mut log_mel = vec![0.0; cfg.n_mels];

        for t in 0..frames {
            let start = t * cfg.hop;
            for (i, c) in buf.iter_mut().enumerate() {
                let v = if i < cfg.frame_len {
                    samples[start + i] * self.window[i]
                } else {
                    0.0
                };
                *c = Complex::new(v, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (lm, filt) in log_mel.iter_mut().zip(&self.filters) {
                let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                *lm = e.max(cfg.log_floor).ln();
            }
            for (j, basis) in self.dct.iter().enumerate() {
                *out.at_mut(t, j) = basis.iter().zip(&log_mel).map(|(b, l)| b * l).sum();
            }
        }
        Ok(FeatureMap(out))
    }
}

fn default_extractor() -> &'static Mfcc {
    static EXTRACTOR: OnceLock<Mfcc> = OnceLock::new();
    EXTRACTOR.get_or_init(|| Mfcc::new(MfccConfig::default()).expect("default mfcc config is valid"))
}

/// MFCC with the default configuration: a 1 s clip yields a 98 x 40 map.
pub fn mfcc(clip: &AudioClip) -> Result<FeatureMap> {
    default_extractor().compute(clip)
}
