use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Reads a PCM or float WAV file. Integer samples are scaled by `2^(bits-1)`,
/// so 16-bit -32768 maps to exactly -1.0. Multi-channel input is rejected
/// unless `downmix` is set, in which case channels are averaged.
pub fn load_wav(path: impl AsRef<Path>, downmix: bool) -> Result<AudioClip> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate {
            path: path.to_path_buf(),
            found: spec.sample_rate,
            expected: SAMPLE_RATE,
        });
    }
    if spec.channels != 1 && !downmix {
        return Err(Error::Channels {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }

    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Int => {
            let scale = f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
    };

    let ch = usize::from(spec.channels);
    let samples = interleaved
        .chunks_exact(ch)
        .map(|frame| (frame.iter().sum::<f64>() / ch as f64).clamp(-1.0, 1.0))
        .collect();
    Ok(AudioClip::new(samples))
}

/// Writes a mono 16-bit PCM file at the clip's sample rate.
pub fn write_wav_pcm16(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}
