//! Audio ingestion, MFCC feature maps, augmentation and SNR-controlled mixing.

mod augment;
mod cache;
mod mfcc;
mod mix;
mod wav;

pub use augment::{apply_augmentation, augment, draw_augmentation, AugmentConfig, AugmentDraw, NoiseDraw};
pub use cache::{extract_dir, read_feature_cache, write_feature_cache, CACHE_MAGIC, CACHE_VERSION};
pub use mfcc::{mfcc, Mfcc, MfccConfig};
pub use mix::{mix_at_snr, mix_with_crop, noise_gain, rms, tile_to, MixOutcome};
pub use wav::{load_wav, write_wav_pcm16};

use crate::numeric::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: Option<String>,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Zero-pads or truncates to exactly `len` samples.
    pub fn fit_to(&self, len: usize) -> AudioClip {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
            label: self.label.clone(),
        }
    }
}

/// Time-major `[T, F]` feature matrix. Display order elsewhere is often `[F, T]`;
/// use [`FeatureMap::to_freq_major`] at that boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap(pub Tensor);

impl FeatureMap {
    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn coeffs(&self) -> usize {
        self.0.cols()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn to_freq_major(&self) -> Tensor {
        self.0.transpose()
    }
}
