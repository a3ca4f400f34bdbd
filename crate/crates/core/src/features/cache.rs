//! `LDYF` feature cache: magic, u16 version, u32 T, u32 F, then `T*F`
//! little-endian f32 values, time-major.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use walkdir::WalkDir;

use super::{load_wav, FeatureMap, Mfcc};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const CACHE_MAGIC: &[u8; 4] = b"LDYF";
pub const CACHE_VERSION: u16 = 1;

pub fn write_feature_cache<W: Write>(mut w: W, fm: &FeatureMap) -> Result<()> {
    let (t, f) = (fm.frames(), fm.coeffs());
    let mut buf = Vec::with_capacity(14 + 4 * t * f);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(f as u32).to_le_bytes());
    for &v in fm.tensor().data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Writes one `.ldyf` per `.wav` under `input`, mirroring the directory tree
/// under `output`. Returns the written paths in sorted order.
pub fn extract_dir(input: &Path, output: &Path, mfcc: &Mfcc, downmix: bool) -> Result<Vec<PathBuf>> {
    let mut wavs: Vec<PathBuf> = WalkDir::new(input)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .map(|e| e.into_path())
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(Error::Dataset(format!("no wav files under {}", input.display())));
    }
    wavs.par_iter()
        .map(|wav| {
            let rel = wav.strip_prefix(input).unwrap_or(wav);
            let dest = output.join(rel).with_extension("ldyf");
            if let Some(parent) = dest.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let fm = mfcc.compute(&load_wav(wav, downmix)?)?;
            write_feature_cache(std::fs::File::create(&dest)?, &fm)?;
            Ok(dest)
        })
        .collect()
}

pub fn read_feature_cache<R: Read>(mut r: R) -> Result<FeatureMap> {
    let mut header = [0u8; 14];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("feature cache: truncated header".into()))?;
    if &header[..4] != CACHE_MAGIC {
        return Err(Error::Format("feature cache: bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("feature cache: unsupported version {version}")));
    }
    let t = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
    let mut body = vec![0u8; 4 * t * f];
    r.read_exact(&mut body)
        .map_err(|_| Error::Format("feature cache: truncated body".into()))?;
    let data = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(FeatureMap(Tensor::from_vec(&[t, f], data)?))
}
