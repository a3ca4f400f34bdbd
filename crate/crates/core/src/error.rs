use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("oracle evaluation returned a non-finite value at coordinate {coordinate}")]
    OracleNonFinite { coordinate: usize },
    #[error("unsupported sample rate {found} Hz in {path} (expected {expected} Hz)")]
    SampleRate {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path} has {channels} channels; pass --downmix to average them")]
    Channels { path: PathBuf, channels: u16 },
    #[error("wav error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("audio too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("SNR undefined: {which} signal is silent")]
    Silent { which: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("unknown layer kind: {0}")]
    UnknownLayer(String),
    #[error("training diverged at iter {iter} (lr {lr:e}, grad norm {grad_norm:e}): {reason}")]
    Diverged {
        iter: usize,
        lr: f64,
        grad_norm: f64,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user configuration rather than data.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::UnknownLayer(_))
    }
}
