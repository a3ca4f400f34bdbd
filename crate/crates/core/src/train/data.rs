//! Labelled clip collections, Speech Commands style splitting, and the
//! stratified training-rate subsample.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use sha1::{Digest, Sha1};
use walkdir::WalkDir;

use super::config::{DataConfig, BACKGROUND_DIR, SILENCE_LABEL, UNKNOWN_LABEL};
use crate::error::{Error, Result};
use crate::features::{load_wav, AudioClip};
use crate::rng::stream;

/// Where an example's audio comes from. Files are read on demand so large
/// corpora need not sit in memory.
#[derive(Clone, Debug)]
pub enum ClipSource {
    Memory(AudioClip),
    File(PathBuf),
    /// `volume * noise[index][offset..offset + len]`, used for synthesized silence.
    NoiseCrop { index: usize, offset: usize, volume: f64 },
}

#[derive(Clone, Debug)]
pub struct Example {
    pub source: ClipSource,
    pub label: String,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// Background noise referenced by `ClipSource::NoiseCrop`.
    pub noise: Vec<AudioClip>,
    pub downmix: bool,
}

impl Dataset {
    pub fn from_clips(clips: Vec<AudioClip>) -> Result<Self> {
        let examples = clips
            .into_iter()
            .map(|c| {
                let label = c
                    .label
                    .clone()
                    .ok_or_else(|| Error::Dataset("clip without a label".into()))?;
                Ok(Example {
                    source: ClipSource::Memory(c),
                    label,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            examples,
            noise: Vec::new(),
            downmix: false,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Loads example `i`, zero-padded or truncated to `len` samples.
    pub fn clip(&self, i: usize, len: usize) -> Result<AudioClip> {
        let ex = &self.examples[i];
        let clip = match &ex.source {
            ClipSource::Memory(c) => c.clone(),
            ClipSource::File(p) => load_wav(p, self.downmix)?,
            ClipSource::NoiseCrop { index, offset, volume } => {
                let noise = &self.noise[*index].samples;
                AudioClip::new(
                    (0..len)
                        .map(|j| volume * noise.get(offset + j).copied().unwrap_or(0.0))
                        .collect(),
                )
            }
        };
        Ok(clip.fit_to(len).with_label(ex.label.clone()))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            noise: self.noise.clone(),
            downmix: self.downmix,
        }
    }
}

/// Maps class names to logit indices.
#[derive(Clone, Debug)]
pub struct ClassMap {
    classes: Vec<String>,
}

impl ClassMap {
    pub fn new(classes: Vec<String>) -> Self {
        Self { classes }
    }

    pub fn names(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn labels_of(&self, ds: &Dataset) -> Result<Vec<usize>> {
        ds.examples.iter().map(|e| self.index_of(&e.label)).collect()
    }
}

fn wav_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| {
            e.file_type().is_file()
                && e.path()
                    .extension()
                    .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
        })
        .map(|e| e.into_path())
        .collect();
    files.sort();
    files
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn dir_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Every `.wav` under `dir`, as unlabelled clips.
pub fn load_noise_dir(dir: impl AsRef<Path>, downmix: bool) -> Result<Vec<AudioClip>> {
    let files = wav_files(dir.as_ref());
    if files.is_empty() {
        return Err(Error::Dataset(format!("no wav files in {}", dir.as_ref().display())));
    }
    files.iter().map(|p| load_wav(p, downmix)).collect()
}

fn map_label(word: &str, cfg: &DataConfig) -> Option<String> {
    if cfg.keywords.iter().any(|k| k == word) || (cfg.background_classes && word == SILENCE_LABEL) {
        Some(word.to_string())
    } else if cfg.background_classes {
        Some(UNKNOWN_LABEL.to_string())
    } else {
        None
    }
}

/// A directory of `<label>/<clip>.wav`. Keyword folders keep their name,
/// `_silence_` is kept, `_background_noise_` is skipped, anything else is
/// `_unknown_` (or skipped when background classes are off).
pub fn load_labeled_dir(dir: impl AsRef<Path>, cfg: &DataConfig) -> Result<Dataset> {
    let mut examples = Vec::new();
    for sub in subdirs(dir.as_ref())? {
        let word = dir_name(&sub);
        if word == BACKGROUND_DIR {
            continue;
        }
        let Some(label) = map_label(&word, cfg) else {
            continue;
        };
        for f in wav_files(&sub) {
            examples.push(Example {
                source: ClipSource::File(f),
                label: label.clone(),
            });
        }
    }
    Ok(Dataset {
        examples,
        noise: Vec::new(),
        downmix: cfg.downmix,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Speech Commands hash split: speakers (the part before `_nohash_`) never
/// straddle splits.
pub fn which_set(file_name: &str, validation_pct: f64, testing_pct: f64) -> Split {
    const MAX_NUM_WAVS_PER_CLASS: u64 = (1 << 27) - 1;
    let base = Path::new(file_name)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let hash_name = match base.find("_nohash_") {
        Some(i) => &base[..i],
        None => &base[..],
    };
    let digest = Sha1::digest(hash_name.as_bytes());
    let tail = u64::from_be_bytes(digest[12..20].try_into().unwrap());
    let pct = (tail % (MAX_NUM_WAVS_PER_CLASS + 1)) as f64 * (100.0 / MAX_NUM_WAVS_PER_CLASS as f64);
    if pct < validation_pct {
        Split::Validation
    } else if pct < testing_pct + validation_pct {
        Split::Test
    } else {
        Split::Train
    }
}

#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub noise: Vec<AudioClip>,
}

const UNKNOWN_STREAM: u64 = 0x554e_4b;
const SILENCE_STREAM: u64 = 0x5349_4c;

/// Loads a Speech Commands style root. Unknown clips are capped and silence
/// clips synthesized from background noise per split, following the dataset's
/// reference recipe.
pub fn load_speech_commands(root: impl AsRef<Path>, cfg: &DataConfig, seed: u64) -> Result<Splits> {
    let root = root.as_ref();
    let mut noise = Vec::new();
    let mut by_split: BTreeMap<Split, (Vec<Example>, Vec<Example>)> = BTreeMap::new();
    for sub in subdirs(root)? {
        let word = dir_name(&sub);
        if word == BACKGROUND_DIR {
            noise = load_noise_dir(&sub, cfg.downmix)?;
            continue;
        }
        let Some(label) = map_label(&word, cfg) else {
            continue;
        };
        for f in wav_files(&sub) {
            let split = which_set(
                &f.file_name().unwrap().to_string_lossy(),
                cfg.validation_percentage,
                cfg.testing_percentage,
            );
            let entry = by_split.entry(split).or_default();
            let ex = Example {
                source: ClipSource::File(f),
                label: label.clone(),
            };
            if label == UNKNOWN_LABEL {
                entry.1.push(ex);
            } else {
                entry.0.push(ex);
            }
        }
    }
    if let Some(dir) = &cfg.noise_dir {
        noise = load_noise_dir(dir, cfg.downmix)?;
    }

    let mut build = |split: Split| -> Dataset {
        let (mut kw, mut unknown) = by_split.remove(&split).unwrap_or_default();
        let n_kw = kw.len();
        unknown.shuffle(&mut stream(seed, &[UNKNOWN_STREAM, split as u64]));
        unknown.truncate((cfg.unknown_fraction * n_kw as f64).round() as usize);
        kw.extend(unknown);
        let n_silence = if cfg.background_classes {
            (cfg.silence_fraction * n_kw as f64).round() as usize
        } else {
            0
        };
        let mut rng = stream(seed, &[SILENCE_STREAM, split as u64]);
        for _ in 0..n_silence {
            let source = if noise.is_empty() {
                ClipSource::Memory(AudioClip::new(vec![0.0; 16_000]))
            } else {
                let index = rng.gen_range(0..noise.len());
                let slack = noise[index].len().saturating_sub(16_000);
                ClipSource::NoiseCrop {
                    index,
                    offset: rng.gen_range(0..=slack),
                    volume: rng.gen_range(0.0..1.0),
                }
            };
            kw.push(Example {
                source,
                label: SILENCE_LABEL.to_string(),
            });
        }
        Dataset {
            examples: kw,
            noise: noise.clone(),
            downmix: cfg.downmix,
        }
    };
    Ok(Splits {
        train: build(Split::Train),
        val: build(Split::Validation),
        test: build(Split::Test),
        noise: noise.clone(),
    })
}

/// Resolves a config's data section into train/val/test sets and a noise pool.
pub fn load_splits(cfg: &DataConfig, seed: u64) -> Result<Splits> {
    if let Some(root) = &cfg.root {
        return load_speech_commands(root, cfg, seed);
    }
    let train_dir = cfg
        .train_dir
        .as_ref()
        .ok_or_else(|| Error::Config("data: set either root or train_dir".into()))?;
    let noise = match &cfg.noise_dir {
        Some(d) => load_noise_dir(d, cfg.downmix)?,
        None => Vec::new(),
    };
    let load = |d: &Option<PathBuf>| -> Result<Dataset> {
        match d {
            Some(d) => load_labeled_dir(d, cfg),
            None => Ok(Dataset::default()),
        }
    };
    Ok(Splits {
        train: load_labeled_dir(train_dir, cfg)?,
        val: load(&cfg.val_dir)?,
        test: load(&cfg.test_dir)?,
        noise,
    })
}

const SUBSAMPLE_STREAM: u64 = 0x5355_42;

/// Keeps `round(n * rate)` examples, each class contributing within one clip
/// of its exact share. Returned indices are ascending; `rate = 1` keeps all.
pub fn stratified_subsample(labels: &[usize], rate: f64, seed: u64) -> Vec<usize> {
    let n = labels.len();
    if rate >= 1.0 {
        return (0..n).collect();
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let target = (n as f64 * rate).round() as usize;
    let mut quotas: Vec<(usize, usize, f64)> = groups
        .iter()
        .map(|(&c, g)| {
            let exact = g.len() as f64 * rate;
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(target.saturating_sub(assigned)) {
        quotas[i].1 += 1;
    }

    let mut keep = Vec::with_capacity(target);
    for (class, quota, _) in quotas {
        let mut g = groups[&class].clone();
        g.shuffle(&mut stream(seed, &[SUBSAMPLE_STREAM, class as u64]));
        keep.extend_from_slice(&g[..quota.min(g.len())]);
    }
    keep.sort_unstable();
    keep
}
