mod common;

use common::*;
use ldyconv::features::Mfcc;
use ldyconv::numeric::ParamSet;
use ldyconv::train::{
    evaluate, load_labeled_dir, serialized_param_scalars, train, training_subset, ClassMap, Checkpoint,
};
use ldyconv::Error;

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[test]
fn identical_seeds_identical_curves() {
    let cfg = small_config(&["a", "b"], 4, 20);
    let splits = splits_from(tone_set(&["a", "b"], 6, 1), tone_set(&["a", "b"], 2, 2));
    let run = |threads| pool(threads).install(|| train(&cfg, &splits, None, |_| {}).unwrap());
    let a = run(1);
    let b = run(1);
    let c = run(4);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.metrics, c.metrics);
    assert_eq!(a.checkpoint.to_bytes(), c.checkpoint.to_bytes());
}

#[test]
fn resume_matches_uninterrupted() {
    let mut cfg = small_config(&["a", "b"], 4, 14);
    cfg.optim.augment = true;
    let mut splits = splits_from(tone_set(&["a", "b"], 5, 3), Vec::new());
    splits.noise = vec![noise_clip(40_000, 9)];
    let full = train(&cfg, &splits, None, |_| {}).unwrap();

    let mut short = cfg.clone();
    short.optim.total_iters = 6;
    let half = train(&short, &splits, None, |_| {}).unwrap();
    let reloaded = Checkpoint::from_bytes(&half.checkpoint.to_bytes()).unwrap();
    let rest = train(&cfg, &splits, Some(reloaded), |_| {}).unwrap();
    assert_eq!(rest.checkpoint.to_bytes(), full.checkpoint.to_bytes());
}

#[test]
fn resume_rejects_other_config() {
    let cfg = small_config(&["a", "b"], 4, 2);
    let splits = splits_from(tone_set(&["a", "b"], 4, 3), Vec::new());
    let out = train(&cfg, &splits, None, |_| {}).unwrap();
    let mut other = cfg.clone();
    other.optim.base_lr = 5e-3;
    let err = train(&other, &splits, Some(out.checkpoint), |_| {}).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn checkpoint_scalars_match_model() {
    let cfg = small_config(&["a", "b"], 4, 1);
    let splits = splits_from(tone_set(&["a", "b"], 4, 3), Vec::new());
    let out = train(&cfg, &splits, None, |_| {}).unwrap();
    let bytes = out.checkpoint.to_bytes();
    assert_eq!(serialized_param_scalars(&bytes).unwrap(), out.checkpoint.model.num_scalars());
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes(), bytes);
}

#[test]
fn subsample_smaller_than_batch_is_error() {
    let mut cfg = small_config(&["a", "b"], 8, 1);
    cfg.optim.training_rate = 0.25;
    let splits = splits_from(tone_set(&["a", "b"], 10, 3), Vec::new());
    let err = train(&cfg, &splits, None, |_| {}).unwrap_err();
    assert!(matches!(err, Error::Dataset(_)), "{err}");
}

#[test]
fn subsample_rate_one_is_identity() {
    let cfg = small_config(&["a", "b"], 4, 1);
    let ds = ldyconv::train::Dataset::from_clips(tone_set(&["a", "b"], 10, 3)).unwrap();
    let classes = ClassMap::new(cfg.data.classes());
    assert_eq!(training_subset(&cfg, &classes, &ds).unwrap(), (0..20).collect::<Vec<_>>());
}

#[test]
fn evaluate_contracts() {
    let cfg = small_config(&["a", "b"], 4, 1);
    let out = train(&cfg, &splits_from(tone_set(&["a", "b"], 4, 3), Vec::new()), None, |_| {}).unwrap();
    let mfcc = Mfcc::new(cfg.mfcc.clone()).unwrap();
    let classes = ClassMap::new(cfg.data.classes());
    let empty = ldyconv::train::Dataset::default();
    assert!(matches!(evaluate(&out.checkpoint.model, &mfcc, &classes, &empty), Err(Error::Dataset(_))));
    let odd = ldyconv::train::Dataset::from_clips(tone_set(&["zz"], 1, 0)).unwrap();
    assert!(matches!(
        evaluate(&out.checkpoint.model, &mfcc, &classes, &odd),
        Err(Error::UnknownLabel(_))
    ));
    let ds = ldyconv::train::Dataset::from_clips(tone_set(&["a", "b"], 3, 5)).unwrap();
    let r = evaluate(&out.checkpoint.model, &mfcc, &classes, &ds).unwrap();
    assert_eq!(r.n, 6);
    assert_eq!(r.confusion.iter().flatten().sum::<usize>(), 6);
    assert!((0.0..=1.0).contains(&r.accuracy));
}

#[test]
fn labeled_dir_maps_unknown_words() {
    let dir = tempfile::tempdir().unwrap();
    let mut clips = tone_set(&["yes", "bed"], 2, 0);
    clips.push(noise_clip(16_000, 1).with_label("_background_noise_"));
    write_labeled_dir(dir.path(), &clips);
    let cfg = ldyconv::train::DataConfig::default();
    let ds = load_labeled_dir(dir.path(), &cfg).unwrap();
    let mut labels: Vec<_> = ds.examples.iter().map(|e| e.label.clone()).collect();
    labels.sort();
    assert_eq!(labels, ["_unknown_", "_unknown_", "yes", "yes"]);
}

#[test]
fn speech_commands_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut clips = tone_set(&["yes", "no", "bed"], 20, 4);
    for (i, c) in clips.iter_mut().enumerate() {
        // Several clips per speaker so the hash split keeps them together.
        c.label = c.label.clone().map(|l| format!("{l}/{:04x}", i / 3));
    }
    for c in &clips {
        let (word, speaker) = c.label.as_deref().unwrap().split_once('/').unwrap();
        let sub = dir.path().join(word);
        std::fs::create_dir_all(&sub).unwrap();
        let n = std::fs::read_dir(&sub).unwrap().count();
        ldyconv::features::write_wav_pcm16(sub.join(format!("{speaker}_nohash_{n}.wav")), c).unwrap();
    }
    let bg = dir.path().join("_background_noise_");
    std::fs::create_dir_all(&bg).unwrap();
    ldyconv::features::write_wav_pcm16(bg.join("white.wav"), &noise_clip(40_000, 2)).unwrap();

    let mut cfg = ldyconv::train::DataConfig::default();
    cfg.keywords = vec!["yes".into(), "no".into()];
    cfg.unknown_fraction = 0.5;
    let splits = ldyconv::train::load_speech_commands(dir.path(), &cfg, 0).unwrap();
    assert_eq!(splits.noise.len(), 1);
    let classes = ClassMap::new(cfg.classes());
    let mut keyword_total = 0;
    for ds in [&splits.train, &splits.val, &splits.test] {
        let labels = classes.labels_of(ds).unwrap();
        let kw = labels.iter().filter(|&&l| l >= 2).count();
        let unknown = labels.iter().filter(|&&l| l == 1).count();
        let silence = labels.iter().filter(|&&l| l == 0).count();
        assert_eq!(unknown, ((kw as f64) * 0.5).round() as usize);
        assert_eq!(silence, ((kw as f64) * 0.1).round() as usize);
        keyword_total += kw;
        for i in 0..ds.len() {
            assert_eq!(ds.clip(i, 16_000).unwrap().len(), 16_000);
        }
    }
    assert_eq!(keyword_total, 40);
    assert!(splits.train.len() > splits.val.len());
}
