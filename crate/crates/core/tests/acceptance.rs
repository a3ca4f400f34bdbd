//! Acceptance checks, one line per criterion. Tolerances are pinned below.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use ldyconv::complexity::{count_model, dyconv_oracle, ldy_kernel_path, formula_costs, CountSpec};
use ldyconv::evalkit::{noise_sweep, training_rate_sweep, NoiseSet, DEFAULT_RATES, DEFAULT_SNRS, TOTAL_ROW};
use ldyconv::features::{mix_at_snr, mfcc, AudioClip, Mfcc, MfccConfig};
use ldyconv::ldy::norm::{feature_norm_cached, temporal_norm_cached};
use ldyconv::ldy::{
    compose_kernels, dynamic_conv_prenorm, idf_forward, ldy_forward, pdf_forward, static_conv, temporal_norm,
    Affine, LdyInit, LdyParams, TAPS,
};
use ldyconv::model::{gradcheck_suite, Model, ModelConfig};
use ldyconv::numeric::Tensor;
use ldyconv::train::{evaluate, lr_schedule, train, ClassMap, Dataset, OptimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PARAM_RANGE: (u64, u64) = (1800, 2600);
const EXPECTED_PARAMS: u64 = 2258;
const PUBLISHED_FLOPS: f64 = 224_000.0;
const FLOP_TOLERANCE: f64 = 0.15;
const COUNT_SECONDS: f64 = 1.0;
const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const GRAD_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const GRAD_SECONDS: f64 = 120.0;
const FACTOR_TOLERANCE: f64 = 1e-10;
const FACTOR_TRIALS: usize = 100;
const NORM_MEAN_TOL: f64 = 1e-6;
const NORM_VAR_TOL: f64 = 1e-3;
const MFCC_REL_TOL: f64 = 1e-3;
const SNR_TOL_DB: f64 = 0.1;
const SMOKE_ACCURACY: f64 = 0.95;
const SMOKE_MAX_ITERS: usize = 2000;
const SMOKE_BATCH: usize = 10;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn complexity_claim() -> Outcome {
    let start = Instant::now();
    let c = count_model(&CountSpec::front_end(98, 40)).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        (PARAM_RANGE.0..=PARAM_RANGE.1).contains(&c.params) && c.params == EXPECTED_PARAMS,
        format!("params {}", c.params),
    )?;
    let rel = (c.flops as f64 - PUBLISHED_FLOPS).abs() / PUBLISHED_FLOPS;
    ensure(rel <= FLOP_TOLERANCE, format!("flops {} off by {:.1}%", c.flops, rel * 100.0))?;
    ensure(c.flops == c.mults + c.adds, "flops != mults + adds")?;
    ensure(secs < COUNT_SECONDS, format!("took {secs:.3}s"))?;
    Ok(format!("params={} flops={} ({:+.2}% vs 224K) in {:.1}ms", c.params, c.flops, (c.flops as f64 / PUBLISHED_FLOPS - 1.0) * 100.0, secs * 1e3))
}

fn cost_formulas() -> Outcome {
    let t = formula_costs(9, 40, 3920);
    ensure(t.ldyconv.params == 369, format!("ldyconv params {}", t.ldyconv.params))?;
    ensure(t.dyconv.params == 81, format!("dyconv params {}", t.dyconv.params))?;
    let k = TAPS as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut gen, mut path) = (Vec::new(), Vec::new());
    for (t, f) in [(49, 20), (49, 40), (98, 40)] {
        let n = (t * f) as u64;
        let x = Tensor::uniform(&[t, f], 1.0, &mut rng);
        let run = dyconv_oracle(&x, TAPS, 1).map_err(|e| e.to_string())?;
        let p_f = LdyParams::init(f, LdyInit::Standard, &mut rng);
        let wp = pdf_forward(&x, &p_f).map_err(|e| e.to_string())?;
        let wh = idf_forward(&x, &p_f).map_err(|e| e.to_string())?;
        let (_, cost) = ldy_kernel_path(&wp, &wh);
        gen.push((n, run.generator.mults));
        path.push((n, cost.mults));
    }
    // Least-squares slope through the origin, then exact residuals.
    let fit = |pts: &[(u64, u64)], scale: u64| -> (f64, u64) {
        let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), &(n, m)| {
            let x = (scale * n) as f64;
            (a + x * m as f64, b + x * x)
        });
        let c = sxy / sxx;
        let resid = pts.iter().map(|&(n, m)| (m as i128 - (c * (scale * n) as f64).round() as i128).unsigned_abs() as u64).max().unwrap();
        (c, resid)
    };
    let (cg, rg) = fit(&gen, k * k);
    let (cp, rp) = fit(&path, k);
    ensure(rg == 0 && rp == 0, format!("residuals {rg} / {rp}"))?;
    ensure(gen[2].1 == 317_520 && path[2].1 == 35_280, format!("counts at N=3920: {} / {}", gen[2].1, path[2].1))?;
    ensure(path.iter().zip(&gen).all(|(p, g)| p.1 * k <= g.1), "kernel path above 1/K of generator")?;
    Ok(format!("K(F+1)=369, K^2=81; generator = {cg}*K^2*N, kernel path = {cp}*K*N, zero residual over N=980,1960,3920"))
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    for seed in GRAD_SEEDS {
        for c in gradcheck_suite(seed, GRAD_EPS).map_err(|e| e.to_string())? {
            if c.max_rel_error > worst.0 {
                worst = (c.max_rel_error, format!("{} (seed {seed})", c.name));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst.0 < GRAD_TOLERANCE, format!("max rel error {:.2e} at {}", worst.0, worst.1))?;
    ensure(secs < GRAD_SECONDS, format!("took {secs:.1}s"))?;
    Ok(format!("max rel error {:.2e} at {} over 5 seeds in {secs:.2}s", worst.0, worst.1))
}

fn factorization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    let mut worst_full = 0.0f64;
    for _ in 0..FACTOR_TRIALS {
        let p = LdyParams::random(5, &mut rng);
        let x = Tensor::uniform(&[8, 5], 3.0, &mut rng);
        let wp = pdf_forward(&x, &p).map_err(|e| e.to_string())?;
        let wh = idf_forward(&x, &p).map_err(|e| e.to_string())?;
        let dynamic = dynamic_conv_prenorm(&x, &compose_kernels(&wp, &wh)).map_err(|e| e.to_string())?;
        let stat = static_conv(&x, &wh.0);
        let mut factored = Tensor::zeros(&[8, 5]);
        for (o, (a, b)) in factored.data_mut().iter_mut().zip(wp.0.data().iter().zip(stat.data())) {
            *o = a * b;
        }
        for (a, b) in dynamic.data().iter().zip(factored.data()) {
            worst = worst.max((a - b).abs());
        }
        // The streaming forward used in training agrees with the same oracle.
        let (y, _) = ldy_forward(&x, &p).map_err(|e| e.to_string())?;
        let expect = temporal_norm(&factored, &p.norm_out);
        for ((yv, xv), e) in y.data().iter().zip(x.data()).zip(expect.data()) {
            worst_full = worst_full.max((yv - xv - e).abs());
        }
    }
    ensure(worst <= FACTOR_TOLERANCE, format!("max |diff| {worst:.2e}"))?;
    ensure(worst_full <= 1e-9, format!("forward vs oracle {worst_full:.2e}"))?;
    Ok(format!("max |dynamic - wp*static| = {worst:.1e} over {FACTOR_TRIALS} inputs"))
}

fn identity_at_init() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = LdyParams::init(40, LdyInit::ZeroResidual, &mut rng);
    ensure(p.norm_out.beta.data().iter().all(|&b| b == 0.0), "beta_out not zero")?;
    for _ in 0..10 {
        let x = Tensor::uniform(&[98, 40], 4.0, &mut rng);
        let (y, _) = ldy_forward(&x, &p).map_err(|e| e.to_string())?;
        ensure(y.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()), "ldy_forward(x) != x")?;
    }
    let cfg = ModelConfig { ldy_init: LdyInit::ZeroResidual, ..Default::default() };
    let model = Model::init(&cfg, &mut rng);
    let baseline = Model { ldy: None, backbone: model.backbone.clone() };
    for _ in 0..5 {
        let x = Tensor::uniform(&[98, 40], 4.0, &mut rng);
        let a = model.forward(&x).map_err(|e| e.to_string())?.0;
        let b = baseline.forward(&x).map_err(|e| e.to_string())?.0;
        ensure(a == b, "logits differ from baseline")?;
    }
    Ok("bit-exact identity on 10 inputs; logits equal baseline on 5".into())
}

fn normalization_stats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut mean_err, mut var_err) = (0.0f64, 0.0f64);
    let mut track = |vals: &[f64]| {
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        mean_err = mean_err.max(m.abs());
        var_err = var_err.max((v - 1.0).abs());
    };
    for trial in 0..20 {
        let scale = 1.0 + trial as f64;
        let mut x = Tensor::uniform(&[98, 40], scale, &mut rng);
        for v in x.data_mut() {
            *v += 7.0;
        }
        let aff = Affine { alpha: Tensor::uniform(&[40], 2.0, &mut rng), beta: Tensor::uniform(&[40], 2.0, &mut rng) };
        let (_, cache) = temporal_norm_cached(&x, &aff);
        for c in 0..40 {
            let col: Vec<f64> = (0..98).map(|t| cache.xhat.at(t, c)).collect();
            track(&col);
        }
        let h: Vec<f64> = (0..40).map(|_| rng.gen_range(-scale..scale) - 3.0).collect();
        let (_, cache) = feature_norm_cached(&h, &aff);
        track(cache.xhat.data());
    }
    ensure(mean_err <= NORM_MEAN_TOL, format!("mean off by {mean_err:.2e}"))?;
    ensure(var_err <= NORM_VAR_TOL, format!("variance off by {var_err:.2e}"))?;
    Ok(format!("|mean| <= {mean_err:.1e}, |var-1| <= {var_err:.1e} (eps shrinkage included)"))
}

fn chirp() -> AudioClip {
    AudioClip::new(
        (0..16_000)
            .map(|n| {
                let t = n as f64 / 16_000.0;
                0.5 * (2.0 * PI * (100.0 * t + (7000.0 - 100.0) * t * t / 2.0)).sin()
            })
            .collect(),
    )
}

/// Direct O(n^2) DFT MFCC, sharing no code with the library extractor.
fn naive_mfcc(x: &[f64]) -> Vec<Vec<f64>> {
    let (sr, frame, hop, nfft, nmels, ncoef) = (16_000.0, 480, 160, 512, 64, 40);
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let (lo, hi) = (mel(20.0), mel(8000.0));
    let edges: Vec<f64> = (0..nmels + 2).map(|i| hz(lo + (hi - lo) * i as f64 / (nmels + 1) as f64)).collect();
    let frames = 1 + (x.len() - frame) / hop;
    (0..frames)
        .map(|fi| {
            let seg: Vec<f64> = (0..frame)
                .map(|n| x[fi * hop + n] * (0.5 - 0.5 * (2.0 * PI * n as f64 / frame as f64).cos()))
                .collect();
            let power: Vec<f64> = (0..=nfft / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (n, v) in seg.iter().enumerate() {
                        let a = -2.0 * PI * (k * n) as f64 / nfft as f64;
                        re += v * a.cos();
                        im += v * a.sin();
                    }
                    re * re + im * im
                })
                .collect();
            let logmel: Vec<f64> = (0..nmels)
                .map(|m| {
                    let (a, b, c) = (edges[m], edges[m + 1], edges[m + 2]);
                    let e: f64 = power
                        .iter()
                        .enumerate()
                        .map(|(k, p)| {
                            let f = k as f64 * sr / nfft as f64;
                            let w = if f > a && f <= b {
                                (f - a) / (b - a)
                            } else if f > b && f < c {
                                (c - f) / (c - b)
                            } else {
                                0.0
                            };
                            w * p
                        })
                        .sum();
                    e.max(1e-10).ln()
                })
                .collect();
            (0..ncoef)
                .map(|j| {
                    let s = if j == 0 { (1.0 / nmels as f64).sqrt() } else { (2.0 / nmels as f64).sqrt() };
                    s * logmel
                        .iter()
                        .enumerate()
                        .map(|(i, l)| l * (PI * j as f64 * (i as f64 + 0.5) / nmels as f64).cos())
                        .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

fn rel_err(a: f64, reference: f64) -> f64 {
    (a - reference).abs() / reference.abs().max(1.0)
}

fn feature_pipeline() -> Outcome {
    let clip = chirp();
    let fm = mfcc(&clip).map_err(|e| e.to_string())?;
    ensure(fm.frames() == 98 && fm.coeffs() == 40, format!("shape {}x{}", fm.frames(), fm.coeffs()))?;

    let reference: Vec<Vec<f64>> = include_str!("data/mfcc_sweep.txt")
        .lines()
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect();
    let naive = naive_mfcc(&clip.samples);
    let (mut e_ref, mut e_naive) = (0.0f64, 0.0f64);
    for t in 0..98 {
        for j in 0..40 {
            e_ref = e_ref.max(rel_err(fm.tensor().at(t, j), reference[t][j]));
            e_naive = e_naive.max(rel_err(fm.tensor().at(t, j), naive[t][j]));
        }
    }
    ensure(e_ref <= MFCC_REL_TOL, format!("vs numpy reference {e_ref:.2e}"))?;
    ensure(e_naive <= MFCC_REL_TOL, format!("vs naive DFT {e_naive:.2e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut snr_err = 0.0f64;
    for trial in 0..10 {
        let clean = tone_clip(trial % 4, "x", &mut rng);
        let noise = noise_clip(48_000, trial as u64);
        for snr in DEFAULT_SNRS {
            let out = mix_at_snr(&clean, &noise, snr, &mut rng).map_err(|e| e.to_string())?;
            let p_clean: f64 = clean.samples.iter().map(|v| v * v).sum();
            let p_noise: f64 = out.clip.samples.iter().zip(&clean.samples).map(|(m, c)| (m - c).powi(2)).sum();
            snr_err = snr_err.max((10.0 * (p_clean / p_noise).log10() - snr).abs());
        }
    }
    ensure(snr_err <= SNR_TOL_DB, format!("snr off by {snr_err:.3} dB"))?;
    Ok(format!("98x40; rel err {e_ref:.1e} vs numpy, {e_naive:.1e} vs naive DFT; SNR within {snr_err:.1e} dB"))
}

fn training_smoke() -> Outcome {
    let words = ["a", "b"];
    let clips = tone_set(&words, 25, 21);
    let mut cfg = small_config(&words, SMOKE_BATCH, SMOKE_MAX_ITERS);
    cfg.optim.log_every = 50;
    let splits = splits_from(clips.clone(), clips.clone());
    let out = train(&cfg, &splits, None, |_| {}).map_err(|e| e.to_string())?;
    ensure(out.metrics.iter().all(|m| m.loss.is_finite()), "non-finite logged loss")?;
    let first = out.metrics.iter().find(|m| m.val_acc.unwrap_or(0.0) >= SMOKE_ACCURACY).map(|m| m.iter);
    let mfcc = Mfcc::new(MfccConfig::default()).unwrap();
    let classes = ClassMap::new(cfg.data.classes());
    let acc = evaluate(&out.checkpoint.model, &mfcc, &classes, &Dataset::from_clips(clips.clone()).unwrap())
        .map_err(|e| e.to_string())?
        .accuracy;
    ensure(acc >= SMOKE_ACCURACY, format!("training accuracy {acc:.3}"))?;

    let mut short = cfg.clone();
    short.optim.total_iters = 40;
    short.optim.log_every = 1;
    let single = || {
        rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| train(&short, &splits, None, |_| {}))
    };
    let a = single().map_err(|e| e.to_string())?;
    let b = single().map_err(|e| e.to_string())?;
    let bits = |m: &[ldyconv::train::MetricRow]| m.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
    ensure(bits(&a.metrics) == bits(&b.metrics), "loss curves differ")?;

    let o = OptimConfig::default();
    ensure(
        lr_schedule(0, &o) == 1e-3 && lr_schedule(10_000, &o) == 1e-4 && lr_schedule(25_000, &o) == 1e-5,
        "lr schedule values",
    )?;
    Ok(format!(
        "train acc {acc:.3} after {SMOKE_MAX_ITERS} iters (>= 0.95 first logged at iter {}); 40-step curves bit-identical; lr 1e-3/1e-4/1e-5",
        first.map(|i| i.to_string()).unwrap_or_else(|| "-".into())
    ))
}

fn protocol_harnesses() -> Outcome {
    let words = ["a", "b", "c"];
    let mut cfg = small_config(&words, 4, 30);
    let train_clips = tone_set(&words, 60, 1);
    let test_clips = tone_set(&words, 4, 2);
    let mut splits = splits_from(train_clips, Vec::new());
    splits.test = Dataset::from_clips(test_clips.clone()).unwrap();

    let model = train(&cfg, &splits, None, |_| {}).map_err(|e| e.to_string())?.checkpoint.model;
    let mfcc = Mfcc::new(cfg.mfcc.clone()).unwrap();
    let classes = ClassMap::new(cfg.data.classes());
    let sets: Vec<NoiseSet> = (0..3)
        .map(|i| NoiseSet { name: format!("set{i}"), clips: vec![noise_clip(6_000 + 20_000 * i, 100 + i as u64)] })
        .collect();
    let sweep = || noise_sweep(&model, &mfcc, &classes, &splits.test, &sets, &DEFAULT_SNRS, 7);
    let t1 = sweep().map_err(|e| e.to_string())?;
    let t2 = sweep().map_err(|e| e.to_string())?;
    ensure(t1.len() == 16 && t1[15].noise_set == TOTAL_ROW, format!("{} rows", t1.len()))?;
    ensure(t1 == t2, "noise sweep not deterministic")?;
    let clean = noise_sweep(&model, &mfcc, &classes, &splits.test, &sets[..1], &[f64::INFINITY], 7).map_err(|e| e.to_string())?;
    let direct = evaluate(&model, &mfcc, &classes, &splits.test).map_err(|e| e.to_string())?;
    ensure(clean[0].accuracy == direct.accuracy, "clean sentinel differs from evaluate")?;

    cfg.optim.total_iters = 5;
    let r1 = training_rate_sweep(&cfg, &splits, &DEFAULT_RATES, &[1]).map_err(|e| e.to_string())?;
    let r2 = training_rate_sweep(&cfg, &splits, &DEFAULT_RATES, &[1]).map_err(|e| e.to_string())?;
    ensure(r1.rows.len() == 5, format!("{} rate rows", r1.rows.len()))?;
    ensure(r1 == r2, "rate sweep not deterministic")?;
    Ok("noise sweep 3x5 + total, rate sweep 5 rows, both reproducible; clean sentinel == evaluate".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("complexity claim", complexity_claim),
        ("cost formulas", cost_formulas),
        ("gradient fidelity", gradient_fidelity),
        ("factorization", factorization),
        ("identity at init", identity_at_init),
        ("normalization statistics", normalization_stats),
        ("feature pipeline", feature_pipeline),
        ("training smoke test", training_smoke),
        ("protocol harnesses", protocol_harnesses),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} [{name}]: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} [{name}]: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
