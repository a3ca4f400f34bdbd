use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{AugmentConfig, MfccConfig};
use crate::model::ModelConfig;

pub const DEFAULT_KEYWORDS: [&str; 10] = ["yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"];
pub const SILENCE_LABEL: &str = "_silence_";
pub const UNKNOWN_LABEL: &str = "_unknown_";
pub const BACKGROUND_DIR: &str = "_background_noise_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub batch_size: usize,
    pub total_iters: usize,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    /// Fraction of training clips used, stratified per class.
    pub training_rate: f64,
    pub augment: bool,
    pub log_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            total_iters: 30_000,
            base_lr: 1e-3,
            lr_decay: 0.1,
            decay_every: 10_000,
            training_rate: 1.0,
            augment: true,
            log_every: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Speech Commands style root, split by filename hash.
    pub root: Option<PathBuf>,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    /// Background noise for augmentation and silence synthesis.
    pub noise_dir: Option<PathBuf>,
    pub keywords: Vec<String>,
    pub validation_percentage: f64,
    pub testing_percentage: f64,
    /// Unknown clips kept per split, as a fraction of that split's keyword clips.
    pub unknown_fraction: f64,
    /// Silence clips synthesized per split, as a fraction of keyword clips.
    pub silence_fraction: f64,
    /// Adds the `_silence_` and `_unknown_` classes; off means keywords only.
    pub background_classes: bool,
    pub downmix: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            train_dir: None,
            val_dir: None,
            test_dir: None,
            noise_dir: None,
            keywords: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            validation_percentage: 10.0,
            testing_percentage: 10.0,
            unknown_fraction: 0.1,
            silence_fraction: 0.1,
            background_classes: true,
            downmix: false,
        }
    }
}

impl DataConfig {
    /// `_silence_`, `_unknown_`, then the keywords.
    pub fn classes(&self) -> Vec<String> {
        let mut c = if self.background_classes {
            vec![SILENCE_LABEL.to_string(), UNKNOWN_LABEL.to_string()]
        } else {
            Vec::new()
        };
        c.extend(self.keywords.iter().cloned());
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub augment: AugmentConfig,
    pub mfcc: MfccConfig,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            augment: AugmentConfig::default(),
            mfcc: MfccConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: TrainConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.mfcc.validate()?;
        let o = &self.optim;
        if !(o.training_rate > 0.0 && o.training_rate <= 1.0) {
            return Err(Error::Config(format!("training_rate {} not in (0, 1]", o.training_rate)));
        }
        if o.batch_size == 0 || o.decay_every == 0 || o.log_every == 0 {
            return Err(Error::Config("batch_size, decay_every and log_every must be positive".into()));
        }
        if !(o.base_lr > 0.0) || !(o.lr_decay > 0.0) {
            return Err(Error::Config("base_lr and lr_decay must be positive".into()));
        }
        if self.model.freq != self.mfcc.n_coeffs {
            return Err(Error::Config(format!(
                "model.freq {} must equal mfcc.n_coeffs {}",
                self.model.freq, self.mfcc.n_coeffs
            )));
        }
        if self.model.backbone.classes != self.data.classes().len() {
            return Err(Error::Config(format!(
                "model classes {} but data defines {} (silence, unknown, {} keywords)",
                self.model.backbone.classes,
                self.data.classes().len(),
                self.data.keywords.len()
            )));
        }
        Ok(())
    }

    /// SHA-256 over everything that affects the trained weights. Paths, the
    /// logging cadence and the iteration budget are excluded so a run can be
    /// resumed from another directory or extended.
    pub fn hash(&self) -> [u8; 32] {
        let mut view = self.clone();
        view.data.root = None;
        view.data.train_dir = None;
        view.data.val_dir = None;
        view.data.test_dir = None;
        view.data.noise_dir = None;
        view.optim.log_every = 0;
        view.optim.total_iters = 0;
        let bytes = serde_json::to_vec(&view).expect("config serializes");
        Sha256::digest(&bytes).into()
    }
}

/// `base_lr * decay^floor(iter / decay_every)`.
pub fn lr_schedule(iter: usize, optim: &OptimConfig) -> f64 {
    let steps = iter / optim.decay_every;
    (0..steps).fold(optim.base_lr, |lr, _| lr * optim.lr_decay)
}
