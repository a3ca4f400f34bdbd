#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use ldyconv::features::{write_wav_pcm16, AudioClip};
use ldyconv::model::ModelConfig;
use ldyconv::backbone::BackboneConfig;
use ldyconv::train::{Dataset, OptimConfig, Splits, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TONES: [f64; 4] = [300.0, 1200.0, 2500.0, 4000.0];

/// One second of a jittered tone with a little white noise, labelled `word`.
pub fn tone_clip(class: usize, word: &str, rng: &mut impl Rng) -> AudioClip {
    let f = TONES[class] * rng.gen_range(0.95..1.05);
    let amp = rng.gen_range(0.2..0.5);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let samples = (0..16_000)
        .map(|i| amp * (2.0 * PI * f * i as f64 / 16_000.0 + phase).sin() + rng.gen_range(-0.01..0.01))
        .collect();
    AudioClip::new(samples).with_label(word)
}

pub fn tone_set(words: &[&str], per_class: usize, seed: u64) -> Vec<AudioClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..per_class {
        for (c, w) in words.iter().enumerate() {
            let _ = i;
            out.push(tone_clip(c, w, &mut rng));
        }
    }
    out
}

pub fn noise_clip(len: usize, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioClip::new((0..len).map(|_| rng.gen_range(-0.3..0.3)).collect())
}

/// Keywords only, 2-block C=8 model.
pub fn small_config(words: &[&str], batch: usize, iters: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.seed = 11;
    cfg.data.keywords = words.iter().map(|s| s.to_string()).collect();
    cfg.data.background_classes = false;
    cfg.model = ModelConfig {
        backbone: BackboneConfig {
            blocks: 2,
            channels: 8,
            classes: words.len(),
        },
        ..Default::default()
    };
    cfg.optim = OptimConfig {
        batch_size: batch,
        total_iters: iters,
        augment: false,
        log_every: 10,
        ..Default::default()
    };
    cfg
}

pub fn splits_from(train: Vec<AudioClip>, val: Vec<AudioClip>) -> Splits {
    Splits {
        train: Dataset::from_clips(train).unwrap(),
        val: Dataset::from_clips(val).unwrap(),
        test: Dataset::default(),
        noise: Vec::new(),
    }
}

/// Writes `<dir>/<label>/<i>.wav` for each labelled clip.
pub fn write_labeled_dir(dir: &Path, clips: &[AudioClip]) {
    for (i, c) in clips.iter().enumerate() {
        let sub = dir.join(c.label.as_deref().unwrap());
        std::fs::create_dir_all(&sub).unwrap();
        write_wav_pcm16(sub.join(format!("clip{i:04}_nohash_0.wav")), c).unwrap();
    }
}
