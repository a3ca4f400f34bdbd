use rand::Rng;

use super::AudioClip;
use crate::error::{Error, Result};

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Noise gain putting `noise` `snr_db` below `clean` in power.
pub fn noise_gain(clean_rms: f64, noise_rms: f64, snr_db: f64) -> f64 {
    clean_rms / noise_rms * 10f64.powf(-snr_db / 20.0)
}

/// Repeats `noise` cyclically until it covers `len` samples.
pub fn tile_to(noise: &[f64], len: usize) -> Vec<f64> {
    if noise.is_empty() {
        return vec![0.0; len];
    }
    noise.iter().copied().cycle().take(len.max(noise.len())).collect()
}

#[derive(Clone, Debug)]
pub struct MixOutcome {
    pub clip: AudioClip,
    pub gain: f64,
    /// Fraction of output samples clamped to [-1, 1].
    pub clamp_rate: f64,
    /// `10 log10(P_clean / P_scaled_noise)` recomputed from the two addends.
    pub measured_snr_db: f64,
}

/// Mixes a pre-cropped noise segment (same length as `clean`) at `snr_db`.
/// `snr_db = +inf` returns the clean clip unchanged.
pub fn mix_with_crop(clean: &AudioClip, crop: &[f64], snr_db: f64) -> Result<MixOutcome> {
    if crop.len() != clean.len() {
        return Err(Error::Shape {
            op: "mix_with_crop",
            expected: vec![clean.len()],
            actual: vec![crop.len()],
        });
    }
    let clean_rms = rms(&clean.samples);
    if clean_rms == 0.0 {
        return Err(Error::Silent { which: "clean" });
    }
    if snr_db == f64::INFINITY {
        return Ok(MixOutcome {
            clip: clean.clone(),
            gain: 0.0,
            clamp_rate: 0.0,
            measured_snr_db: f64::INFINITY,
        });
    }
    let noise_rms = rms(crop);
    if noise_rms == 0.0 {
        return Err(Error::Silent { which: "noise" });
    }
    let gain = noise_gain(clean_rms, noise_rms, snr_db);
    let scaled: Vec<f64> = crop.iter().map(|n| gain * n).collect();
    let measured = 10.0 * (clean_rms.powi(2) / rms(&scaled).powi(2)).log10();

    let mut clamped = 0usize;
    let samples = clean
        .samples
        .iter()
        .zip(&scaled)
        .map(|(c, n)| {
            let v = c + n;
            if v.abs() > 1.0 {
                clamped += 1;
            }
            v.clamp(-1.0, 1.0)
        })
        .collect();
    Ok(MixOutcome {
        clip: AudioClip {
            samples,
            sample_rate: clean.sample_rate,
            label: clean.label.clone(),
        },
        gain,
        clamp_rate: clamped as f64 / clean.len().max(1) as f64,
        measured_snr_db: measured,
    })
}

/// Mixes a random crop of `noise` into `clean` at `snr_db`.
pub fn mix_at_snr<R: Rng + ?Sized>(
    clean: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    rng: &mut R,
) -> Result<MixOutcome> {
    if noise.len() < clean.len() {
        return Err(Error::TooShort {
            len: noise.len(),
            min: clean.len(),
        });
    }
    let offset = rng.gen_range(0..=noise.len() - clean.len());
    mix_with_crop(clean, &noise.samples[offset..offset + clean.len()], snr_db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gain_examples() {
        assert!((noise_gain(0.3, 0.3, 0.0) - 1.0).abs() < 1e-15);
        assert!((noise_gain(0.1, 0.1, 20.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn silent_inputs_rejected() {
        let clean = AudioClip::new(vec![0.0; 100]);
        let noise = AudioClip::new(vec![0.1; 100]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            mix_at_snr(&clean, &noise, 5.0, &mut rng),
            Err(Error::Silent { which: "clean" })
        ));
        assert!(matches!(
            mix_at_snr(&noise, &clean, 5.0, &mut rng),
            Err(Error::Silent { which: "noise" })
        ));
    }

    #[test]
    fn infinite_snr_is_identity() {
        let clean = AudioClip::new(vec![0.2, -0.1, 0.05]);
        let out = mix_with_crop(&clean, &[1.0, 1.0, 1.0], f64::INFINITY).unwrap();
        assert_eq!(out.clip, clean);
    }

    #[test]
    fn clamping_reported() {
        let clean = AudioClip::new(vec![0.9, 0.9, -0.9, 0.0]);
        let out = mix_with_crop(&clean, &[1.0, -1.0, -1.0, 0.0], -10.0).unwrap();
        assert!(out.clip.samples.iter().all(|v| v.abs() <= 1.0));
        assert!(out.clamp_rate > 0.0);
    }

    #[test]
    fn tile_covers_length() {
        assert_eq!(tile_to(&[1.0, 2.0], 5), vec![1.0, 2.0, 1.0, 2.0, 1.0]);
    }

    proptest! {
        #[test]
        fn measured_snr_matches_target(
            seed in any::<u64>(),
            snr in prop::sample::select(vec![20.0, 15.0, 10.0, 5.0, 0.0]),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clean = AudioClip::new((0..800).map(|_| rng.gen_range(-0.5..0.5)).collect());
            let noise = AudioClip::new((0..1200).map(|_| rng.gen_range(-0.3..0.3)).collect());
            let out = mix_at_snr(&clean, &noise, snr, &mut rng).unwrap();
            prop_assert!((out.measured_snr_db - snr).abs() < 0.1);
        }
    }
}
