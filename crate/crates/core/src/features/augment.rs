use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AudioClip;

/// Time-shift and background-noise augmentation, defaults per the Speech
/// Commands training recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub max_shift_ms: f64,
    pub noise_prob: f64,
    pub max_noise_volume: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_shift_ms: 100.0,
            noise_prob: 0.8,
            max_noise_volume: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub index: usize,
    pub offset: usize,
    pub volume: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentDraw {
    /// Positive values delay the clip; `out[i] = clip[i - shift]`.
    pub shift: isize,
    pub noise: Option<NoiseDraw>,
}

pub fn draw_augmentation<R: Rng + ?Sized>(
    clip: &AudioClip,
    pool: &[AudioClip],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> AugmentDraw {
    let max_shift = (cfg.max_shift_ms * f64::from(clip.sample_rate) / 1000.0).round() as isize;
    let shift = if max_shift > 0 {
        rng.gen_range(-max_shift..=max_shift)
    } else {
        0
    };
    let usable: Vec<usize> = (0..pool.len()).filter(|&i| !pool[i].is_empty()).collect();
    if usable.is_empty() {
        return AugmentDraw { shift, noise: None };
    }
    let noise = if rng.gen_bool(cfg.noise_prob.clamp(0.0, 1.0)) {
        let index = usable[rng.gen_range(0..usable.len())];
        let slack = pool[index].len().saturating_sub(clip.len());
        let offset = rng.gen_range(0..=slack);
        let volume = rng.gen_range(0.0..=cfg.max_noise_volume.max(0.0));
        Some(NoiseDraw { index, offset, volume })
    } else {
        None
    };
    AugmentDraw { shift, noise }
}

/// Applies a drawn augmentation. Shifted-in samples are zero; noise shorter
/// than the clip wraps around; the result is clamped to [-1, 1].
pub fn apply_augmentation(clip: &AudioClip, pool: &[AudioClip], draw: &AugmentDraw) -> AudioClip {
    let n = clip.len() as isize;
    let mut samples: Vec<f64> = (0..n)
        .map(|i| {
            let src = i - draw.shift;
            if (0..n).contains(&src) {
                clip.samples[src as usize]
            } else {
                0.0
            }
        })
        .collect();
    if let Some(nd) = &draw.noise {
        let noise = &pool[nd.index].samples;
        for (i, s) in samples.iter_mut().enumerate() {
            *s = (*s + nd.volume * noise[(nd.offset + i) % noise.len()]).clamp(-1.0, 1.0);
        }
    }
    AudioClip {
        samples,
        sample_rate: clip.sample_rate,
        label: clip.label.clone(),
    }
}

pub fn augment<R: Rng + ?Sized>(
    clip: &AudioClip,
    pool: &[AudioClip],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> AudioClip {
    let draw = draw_augmentation(clip, pool, cfg, rng);
    apply_augmentation(clip, pool, &draw)
}
