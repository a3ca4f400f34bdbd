//! Robustness and data-efficiency protocols: accuracy under additive noise
//! at fixed SNRs, and accuracy against the fraction of training data used.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{mix_at_snr, tile_to, AudioClip, Mfcc};
use crate::model::Model;
use crate::rng::stream;
use crate::train::{clip_features, evaluate, report, train, training_subset, ClassMap, Dataset, Splits, TrainConfig, CLIP_SAMPLES};

pub const DEFAULT_SNRS: [f64; 5] = [20.0, 15.0, 10.0, 5.0, 0.0];
pub const DEFAULT_RATES: [f64; 5] = [0.75, 0.5, 0.25, 0.10, 0.05];
pub const TOTAL_ROW: &str = "total_avg";

#[derive(Clone, Debug)]
pub struct NoiseSet {
    pub name: String,
    pub clips: Vec<AudioClip>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub noise_set: String,
    /// `inf` for the clean condition; empty on the total row.
    pub snr_db: Option<f64>,
    pub accuracy: f64,
    pub n_clips: usize,
}

/// Mixes every test clip with one crop from each noise set at each SNR and
/// evaluates. The crop for a clip depends only on `(seed, set, clip)`, so
/// all SNRs of a set see the same noise. Noise shorter than a clip is tiled.
/// Silent clips are left as they are. The last row averages all cells.
///
/// The noise sets should not overlap any noise used during training.
pub fn noise_sweep(
    model: &Model,
    mfcc: &Mfcc,
    classes: &ClassMap,
    test: &Dataset,
    noise_sets: &[NoiseSet],
    snrs: &[f64],
    seed: u64,
) -> Result<Vec<NoiseRow>> {
    if test.is_empty() {
        return Err(Error::Dataset("noise sweep: test set is empty".into()));
    }
    if noise_sets.is_empty() {
        return Err(Error::Dataset("noise sweep: no noise sets".into()));
    }
    for s in noise_sets {
        if s.clips.iter().all(|c| c.is_empty()) {
            return Err(Error::Dataset(format!("noise set {:?} is empty", s.name)));
        }
    }
    let labels = classes.labels_of(test)?;
    let clean: Vec<AudioClip> = (0..test.len())
        .into_par_iter()
        .map(|i| test.clip(i, CLIP_SAMPLES))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (si, set) in noise_sets.iter().enumerate() {
        let usable: Vec<&AudioClip> = set.clips.iter().filter(|c| !c.is_empty()).collect();
        for &snr in snrs {
            let preds = clean
                .par_iter()
                .enumerate()
                .map(|(i, clip)| {
                    let mixed = if snr == f64::INFINITY {
                        clip.clone()
                    } else {
                        let mut rng = stream(seed, &[si as u64, i as u64]);
                        let noise = usable[rng.gen_range(0..usable.len())];
                        let noise = AudioClip::new(tile_to(&noise.samples, clip.len()));
                        match mix_at_snr(clip, &noise, snr, &mut rng) {
                            Ok(m) => m.clip,
                            Err(Error::Silent { which: "clean" }) => clip.clone(),
                            Err(e) => return Err(e),
                        }
                    };
                    model.predict(&clip_features(mfcc, &mixed)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let r = report(&labels, &preds, classes.len());
            rows.push(NoiseRow {
                noise_set: set.name.clone(),
                snr_db: Some(snr),
                accuracy: r.accuracy,
                n_clips: r.n,
            });
        }
    }
    let cells = rows.len().max(1) as f64;
    rows.push(NoiseRow {
        noise_set: TOTAL_ROW.to_string(),
        snr_db: None,
        accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / cells,
        n_clips: rows.iter().map(|r| r.n_clips).sum(),
    });
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub training_rate: f64,
    pub iters: usize,
    /// Mean test accuracy over seeds.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateSweep {
    pub rows: Vec<RateRow>,
    /// `per_seed[r][s]`: accuracy of rate `r` under seed `s`.
    pub per_seed: Vec<Vec<f64>>,
    /// Whether mean accuracy never rises as the rate shrinks. Informational.
    pub monotone: bool,
}

/// Trains one model per `(rate, seed)` on the stratified subset and reports
/// accuracy on the test split, or the validation split when there is none.
/// All rates are checked against the batch size before any training starts.
pub fn training_rate_sweep(base: &TrainConfig, splits: &Splits, rates: &[f64], seeds: &[u64]) -> Result<RateSweep> {
    if rates.is_empty() || seeds.is_empty() {
        return Err(Error::Config("rate sweep needs at least one rate and one seed".into()));
    }
    let eval_set = if !splits.test.is_empty() {
        &splits.test
    } else if !splits.val.is_empty() {
        &splits.val
    } else {
        return Err(Error::Dataset("rate sweep: no test or validation clips".into()));
    };
    let classes = ClassMap::new(base.data.classes());
    let configs: Vec<TrainConfig> = rates
        .iter()
        .map(|&rate| {
            let mut cfg = base.clone();
            cfg.optim.training_rate = rate;
            cfg.validate()?;
            training_subset(&cfg, &classes, &splits.train)?;
            Ok(cfg)
        })
        .collect::<Result<_>>()?;
    let mfcc = Mfcc::new(base.mfcc.clone())?;

    let mut rows = Vec::new();
    let mut per_seed = Vec::new();
    for cfg in configs {
        let mut accs = Vec::new();
        for &s in seeds {
            let mut c = cfg.clone();
            c.seed = s;
            let out = train(&c, splits, None, |_| {})?;
            accs.push(evaluate(&out.checkpoint.model, &mfcc, &classes, eval_set)?.accuracy);
        }
        rows.push(RateRow {
            training_rate: cfg.optim.training_rate,
            iters: cfg.optim.total_iters,
            accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
        });
        per_seed.push(accs);
    }
    let mut by_rate: Vec<&RateRow> = rows.iter().collect();
    by_rate.sort_by(|a, b| b.training_rate.total_cmp(&a.training_rate));
    let monotone = by_rate.windows(2).all(|w| w[1].accuracy <= w[0].accuracy);
    Ok(RateSweep { rows, per_seed, monotone })
}

/// `noise_set,snr_db,accuracy,n_clips`.
pub fn write_noise_csv<W: Write>(w: W, rows: &[NoiseRow]) -> Result<()> {
    write_rows(w, rows)
}

pub fn read_noise_csv<R: Read>(r: R) -> Result<Vec<NoiseRow>> {
    read_rows(r)
}

/// `training_rate,iters,accuracy`.
pub fn write_rate_csv<W: Write>(w: W, rows: &[RateRow]) -> Result<()> {
    write_rows(w, rows)
}

pub fn read_rate_csv<R: Read>(r: R) -> Result<Vec<RateRow>> {
    read_rows(r)
}

fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(r).deserialize().map(|r| r.map_err(Error::from)).collect()
}
