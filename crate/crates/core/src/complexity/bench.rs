use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::oracle::dyconv_oracle;
use crate::error::{Error, Result};
use crate::ldy::{ldy_forward, LdyInit, LdyParams, TAPS};
use crate::model::{Model, ModelConfig};
use crate::numeric::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchStats {
    pub component: String,
    pub time: usize,
    pub reps: usize,
    pub median_s: f64,
    pub iqr_s: f64,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// First, second and third quartiles with linear interpolation between order
/// statistics.
pub fn quartiles(samples: &[f64]) -> (f64, f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    (q(0.25), q(0.5), q(0.75))
}

/// One untimed warmup, then `reps` timed calls.
pub fn bench_fn(component: &str, time: usize, reps: usize, mut f: impl FnMut()) -> Result<BenchStats> {
    if reps < 3 {
        return Err(Error::Config(format!("bench needs at least 3 repetitions, got {reps}")));
    }
    f();
    let samples: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64()
        })
        .collect();
    let (q1, median, q3) = quartiles(&samples);
    Ok(BenchStats {
        component: component.to_string(),
        time,
        reps,
        median_s: median,
        iqr_s: q3 - q1,
        samples,
    })
}

/// Front-end forward against the dense dynamic-convolution oracle at each
/// input length in `times`, plus the full model at the first length.
pub fn bench(cfg: &ModelConfig, times: &[usize], reps: usize) -> Result<Vec<BenchStats>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ldy = LdyParams::init(cfg.freq, LdyInit::Standard, &mut rng);
    let model = Model::init(cfg, &mut rng);
    let mut out = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let x = Tensor::uniform(&[t, cfg.freq], 1.0, &mut rng);
        out.push(bench_fn("ldyconv", t, reps, || {
            std::hint::black_box(ldy_forward(&x, &ldy).expect("valid input"));
        })?);
        out.push(bench_fn("dyconv_oracle", t, reps, || {
            std::hint::black_box(dyconv_oracle(&x, TAPS, 0).expect("valid input"));
        })?);
        if i == 0 {
            out.push(bench_fn("model", t, reps, || {
                std::hint::black_box(model.forward(&x).expect("valid input"));
            })?);
        }
    }
    Ok(out)
}

/// `component,time,reps,median_s,iqr_s`.
pub fn write_bench_csv<W: Write>(w: W, rows: &[BenchStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_rep_count() {
        let mut calls = 0;
        let s = bench_fn("x", 1, 3, || calls += 1).unwrap();
        assert_eq!(calls, 4);
        assert_eq!(s.samples.len(), 3);
        assert!(bench_fn("x", 1, 2, || {}).is_err());
    }

    #[test]
    fn quartile_interpolation() {
        assert_eq!(quartiles(&[4.0, 1.0, 3.0, 2.0, 5.0]), (2.0, 3.0, 4.0));
        assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0]), (1.75, 2.5, 3.25));
    }
}
