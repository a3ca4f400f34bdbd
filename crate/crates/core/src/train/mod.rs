//! Mini-batch training with Adam, evaluation, and checkpoints.
//!
//! Batches are a pure function of `(seed, iteration)`: each epoch has its own
//! seeded permutation and each batch slot its own augmentation stream, so a
//! resumed run replays exactly what an uninterrupted one would have done.
//! Per-example gradients are computed in parallel and summed in batch order,
//! which keeps results independent of the thread count.

pub mod checkpoint;
mod config;
pub mod data;

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{serialized_param_scalars, Checkpoint};
pub use config::{
    lr_schedule, DataConfig, OptimConfig, TrainConfig, BACKGROUND_DIR, DEFAULT_KEYWORDS, SILENCE_LABEL,
    UNKNOWN_LABEL,
};
pub use data::{
    load_labeled_dir, load_noise_dir, load_speech_commands, load_splits, stratified_subsample, which_set, ClassMap,
    ClipSource, Dataset, Example, Split, Splits,
};

use crate::error::{Error, Result};
use crate::features::{augment, AudioClip, Mfcc};
use crate::model::Model;
use crate::numeric::{adam_step, ParamSet, Tensor};
use crate::rng::{derive_seed, stream};

/// Every clip is padded or truncated to one second before feature extraction.
pub const CLIP_SAMPLES: usize = 16_000;

const SHUFFLE_STREAM: u64 = 0x5348_55;
const AUGMENT_STREAM: u64 = 0x4155_47;
const INIT_STREAM: u64 = 0x494e_49;
const SUBSET_STREAM: u64 = 0x5253_54;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iter: usize,
    pub lr: f64,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRow>,
    /// Size of the stratified training subset.
    pub train_clips: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// MFCC map of a clip after fitting it to one second.
pub fn clip_features(mfcc: &Mfcc, clip: &AudioClip) -> Result<Tensor> {
    Ok(mfcc.compute(&clip.fit_to(CLIP_SAMPLES))?.into_tensor())
}

/// Accuracy and confusion matrix of `model` over `ds`.
pub fn evaluate(model: &Model, mfcc: &Mfcc, classes: &ClassMap, ds: &Dataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let labels = classes.labels_of(ds)?;
    let preds = (0..ds.len())
        .into_par_iter()
        .map(|i| model.predict(&clip_features(mfcc, &ds.clip(i, CLIP_SAMPLES)?)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(report(&labels, &preds, classes.len()))
}

/// Builds an accuracy/confusion report from parallel label and prediction lists.
pub fn report(labels: &[usize], preds: &[usize], n_classes: usize) -> EvalReport {
    let mut confusion = vec![vec![0; n_classes]; n_classes];
    let mut correct = 0;
    for (&l, &p) in labels.iter().zip(preds) {
        confusion[l][p.min(n_classes - 1)] += 1;
        correct += usize::from(l == p);
    }
    EvalReport {
        accuracy: correct as f64 / labels.len().max(1) as f64,
        n: labels.len(),
        confusion,
    }
}

/// Indices of the training subset selected by `optim.training_rate`.
pub fn training_subset(cfg: &TrainConfig, classes: &ClassMap, train: &Dataset) -> Result<Vec<usize>> {
    let labels = classes.labels_of(train)?;
    let keep = stratified_subsample(&labels, cfg.optim.training_rate, derive_seed(cfg.seed, &[SUBSET_STREAM]));
    if keep.len() < cfg.optim.batch_size {
        return Err(Error::Dataset(format!(
            "training rate {} leaves {} clips, fewer than one batch of {}",
            cfg.optim.training_rate,
            keep.len(),
            cfg.optim.batch_size
        )));
    }
    Ok(keep)
}

enum Inputs {
    Features(Vec<Tensor>),
    Audio,
}

/// Trains from scratch, or continues `resume` up to `optim.total_iters`.
/// `on_log` sees each metric row as it is produced.
pub fn train(
    cfg: &TrainConfig,
    splits: &Splits,
    resume: Option<Checkpoint>,
    mut on_log: impl FnMut(&MetricRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let classes = ClassMap::new(cfg.data.classes());
    let mfcc = Mfcc::new(cfg.mfcc.clone())?;
    let subset = training_subset(cfg, &classes, &splits.train)?;
    let train_set = splits.train.subset(&subset);
    let labels = classes.labels_of(&train_set)?;
    let n = train_set.len();
    let b = cfg.optim.batch_size;

    let mut ck = match resume {
        Some(ck) => {
            if ck.config.hash() != cfg.hash() {
                return Err(Error::Config(
                    "checkpoint was trained under a different configuration".into(),
                ));
            }
            ck
        }
        None => {
            let model = Model::init(&cfg.model, &mut stream(cfg.seed, &[INIT_STREAM]));
            Checkpoint::fresh(cfg.clone(), model)
        }
    };
    // Only the budget and paths may differ on resume; keep the caller's.
    ck.config = cfg.clone();

    let inputs = if cfg.optim.augment {
        Inputs::Audio
    } else {
        Inputs::Features(
            (0..n)
                .into_par_iter()
                .map(|i| clip_features(&mfcc, &train_set.clip(i, CLIP_SAMPLES)?))
                .collect::<Result<_>>()?,
        )
    };
    let noise = &splits.noise;

    let mut perm_cache: Option<(usize, Vec<usize>)> = None;
    let mut metrics = Vec::new();
    let mut loss_acc = 0.0;
    let mut loss_count = 0usize;
    let start = ck.iteration as usize;
    for it in start..cfg.optim.total_iters {
        let lr = lr_schedule(it, &cfg.optim);
        let mut batch = Vec::with_capacity(b);
        for slot in 0..b {
            let pos = it * b + slot;
            let epoch = pos / n;
            if perm_cache.as_ref().map(|p| p.0) != Some(epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut stream(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
                perm_cache = Some((epoch, perm));
            }
            batch.push(perm_cache.as_ref().unwrap().1[pos % n]);
        }

        let results = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let x = match &inputs {
                    Inputs::Features(f) => f[i].clone(),
                    Inputs::Audio => {
                        let clip = train_set.clip(i, CLIP_SAMPLES)?;
                        let mut rng = stream(cfg.seed, &[AUGMENT_STREAM, it as u64, slot as u64]);
                        clip_features(&mfcc, &augment(&clip, noise, &cfg.augment, &mut rng))?
                    }
                };
                let (loss, grads, _) = ck.model.loss_and_grad(&x, labels[i])?;
                Ok((loss, grads))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut grads = ck.model.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            grads.accumulate(g);
        }
        loss /= b as f64;
        grads.scale_all(1.0 / b as f64);
        let grad_norm = grads.global_norm();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Diverged {
                iter: it,
                lr,
                grad_norm,
                reason: format!("loss {loss}"),
            });
        }

        let grad_tensors: Vec<Tensor> = grads.tensors().into_iter().map(|(_, t)| t.clone()).collect();
        for ((slot, state), g) in ck.model.tensors_mut().into_iter().zip(ck.adam.iter_mut()).zip(&grad_tensors) {
            let (p, s) = adam_step(slot.1, g, state, lr)?;
            *slot.1 = p;
            *state = s;
        }
        ck.iteration = it as u64 + 1;
        ck.rng_counter = ck.iteration;

        loss_acc += loss;
        loss_count += 1;
        let done = it + 1 == cfg.optim.total_iters;
        if (it + 1) % cfg.optim.log_every == 0 || done {
            let val_acc = if splits.val.is_empty() {
                None
            } else {
                Some(evaluate(&ck.model, &mfcc, &classes, &splits.val)?.accuracy)
            };
            let row = MetricRow {
                iter: it + 1,
                lr,
                loss: loss_acc / loss_count as f64,
                val_acc,
            };
            on_log(&row);
            metrics.push(row);
            loss_acc = 0.0;
            loss_count = 0;
        }
    }
    Ok(TrainOutcome {
        checkpoint: ck,
        metrics,
        train_clips: n,
    })
}

/// Writes `iter,lr,loss,val_acc`; a missing validation accuracy is left blank.
pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "lr", "loss", "val_acc"])?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            format!("{:e}", r.lr),
            r.loss.to_string(),
            r.val_acc.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
