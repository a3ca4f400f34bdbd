use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use ldyconv::backbone::BackboneConfig;
use ldyconv::features::{write_wav_pcm16, AudioClip};
use ldyconv::model::ModelConfig;
use ldyconv::train::{OptimConfig, TrainConfig};

fn ldyconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldyconv")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tone(freq: f64, amp: f64) -> AudioClip {
    AudioClip::new((0..16_000).map(|i| amp * (2.0 * PI * freq * i as f64 / 16_000.0).sin()).collect())
}

/// `<dir>/<word>/<n>_nohash_0.wav`, two well separated tones.
fn write_tones(dir: &Path, per_class: usize) {
    for (word, base) in [("low", 400.0), ("high", 3000.0)] {
        std::fs::create_dir_all(dir.join(word)).unwrap();
        for i in 0..per_class {
            let clip = tone(base * (1.0 + 0.01 * i as f64), 0.3 + 0.02 * i as f64);
            write_wav_pcm16(dir.join(word).join(format!("{i:03}_nohash_0.wav")), &clip).unwrap();
        }
    }
}

fn small_config(train: &Path, test: &Path) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.data.keywords = vec!["low".into(), "high".into()];
    cfg.data.background_classes = false;
    cfg.data.train_dir = Some(train.into());
    cfg.data.test_dir = Some(test.into());
    cfg.model = ModelConfig {
        backbone: BackboneConfig {
            blocks: 2,
            channels: 8,
            classes: 2,
        },
        ..Default::default()
    };
    cfg.optim = OptimConfig {
        batch_size: 4,
        total_iters: 20,
        augment: false,
        log_every: 10,
        ..Default::default()
    };
    cfg
}

#[test]
fn count_reports_front_end_and_formula() {
    let o = ldyconv(&["count"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("params=2258"), "{out}");
    assert!(out.contains("K(F+1)=369"), "{out}");
    assert!(out.lines().next().unwrap().starts_with("component,params,mults,adds,flops"));
}

#[test]
fn count_accepts_layer_list() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("layers.toml");
    std::fs::write(&spec, "time = 98\nfreq = 40\n[[layers]]\nkind = \"ldyconv\"\n").unwrap();
    let o = ldyconv(&["count", "--config", spec.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("params=2258"));

    std::fs::write(&spec, "time = 98\nfreq = 40\n[[layers]]\nkind = \"lstm\"\n").unwrap();
    assert_eq!(ldyconv(&["count", "--config", spec.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn gradcheck_is_deterministic() {
    let a = ldyconv(&["gradcheck", "--seed", "7"]);
    let b = ldyconv(&["gradcheck", "--seed", "7"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("PASS"));
}

#[test]
fn extract_writes_98_by_40() {
    let dir = tempfile::tempdir().unwrap();
    let (wavs, feats) = (dir.path().join("wav"), dir.path().join("feat"));
    write_tones(&wavs, 1);
    let o = ldyconv(&["extract", "--in", wavs.to_str().unwrap(), "--out", feats.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(feats.join("low").join("000_nohash_0.ldyf")).unwrap();
    assert_eq!(&bytes[..4], b"LDYF");
    assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 98);
    assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 40);
    assert_eq!(bytes.len(), 14 + 4 * 98 * 40);
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.ldyc");
    let out = out.to_str().unwrap();

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"eleven\"\n").unwrap();
    assert_eq!(ldyconv(&["train", "--config", bad.to_str().unwrap(), "--out", out]).status.code(), Some(2));
    assert_eq!(ldyconv(&["train", "--config", "/no/such.toml", "--out", out]).status.code(), Some(2));
    assert_eq!(ldyconv(&["count", "--bogus"]).status.code(), Some(2));
    assert_eq!(ldyconv(&["bench", "--reps", "1"]).status.code(), Some(2));

    let cfg = small_config(&dir.path().join("missing"), &dir.path().join("missing"));
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    assert_eq!(ldyconv(&["train", "--config", path.to_str().unwrap(), "--out", out]).status.code(), Some(1));
    assert_eq!(ldyconv(&["eval", "--ckpt", "/no/such.ldyc"]).status.code(), Some(1));
}

#[test]
fn train_then_eval_and_noise_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test, noise) = (dir.path().join("train"), dir.path().join("test"), dir.path().join("noise"));
    write_tones(&train, 6);
    write_tones(&test, 2);
    std::fs::create_dir_all(&noise).unwrap();
    write_wav_pcm16(noise.join("hum.wav"), &tone(60.0, 0.2)).unwrap();

    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, small_config(&train, &test).to_toml()).unwrap();
    let ckpt = dir.path().join("model.ldyc");
    let o = ldyconv(&[
        "--threads",
        "2",
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("model.metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "iter,lr,loss,val_acc");
    assert_eq!(metrics.lines().count(), 3);

    let o = ldyconv(&["eval", "--ckpt", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.starts_with("accuracy "), "{out}");
    assert!(out.contains("(4 clips)"));

    let csv = dir.path().join("noise.csv");
    let o = ldyconv(&[
        "noise-sweep",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--noise",
        noise.to_str().unwrap(),
        "--snrs",
        "inf,0",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = ldyconv::evalkit::read_noise_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].noise_set, ldyconv::evalkit::TOTAL_ROW);
}
