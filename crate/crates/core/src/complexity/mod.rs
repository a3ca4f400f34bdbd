//! Parameter, operation and memory accounting.
//!
//! Counting convention: every multiply and every add is one operation and the
//! two are tallied separately; a division, square root, sigmoid or ReLU counts
//! as one and is booked with the multiplies, so `flops == mults + adds`.
//! Convolutions skip out-of-range taps: an output with `v` valid taps costs
//! `v` mults and `v - 1` adds. A norm over `n` values per channel costs
//! `3n + 4` mults and `4n - 1` adds (mean, centring, square, variance, eps,
//! sqrt, reciprocal, scale, affine).

mod bench;
mod oracle;

use std::io::Write;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

pub use bench::{bench, bench_fn, quartiles, write_bench_csv, BenchStats};
pub use oracle::{dyconv_oracle, ldy_kernel_path, DyConvRun};

use crate::backbone::{BackboneConfig, STEM_KERNEL, TEMPORAL_KERNEL};
use crate::error::{Error, Result};
use crate::ldy::{conv::tap_offset, TAPS};
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: u64,
    pub mults: u64,
    pub adds: u64,
    pub flops: u64,
    /// Peak number of auxiliary values held beyond input and output.
    pub aux_space: u64,
}

impl CostReport {
    pub fn new(params: u64, mults: u64, adds: u64, aux_space: u64) -> Self {
        Self {
            params,
            mults,
            adds,
            flops: mults + adds,
            aux_space,
        }
    }

    pub fn params(params: u64) -> Self {
        Self::new(params, 0, 0, 0)
    }

    pub fn ops(mults: u64, adds: u64) -> Self {
        Self::new(0, mults, adds, 0)
    }
}

impl Add for CostReport {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.params + o.params,
            self.mults + o.mults,
            self.adds + o.adds,
            self.aux_space.max(o.aux_space),
        )
    }
}

impl AddAssign for CostReport {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for CostReport {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Closed-form costs of one K-tap layer over N pixels with F input features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostFormulas {
    pub conv: CostReport,
    pub dyconv: CostReport,
    pub ldyconv: CostReport,
    /// Terms the LDyConv formula leaves out: the IDF's first dense layer
    /// (F^2 + F weights, F^2 mults) and the pixel kernel plus three affine
    /// pairs (K + 6F).
    pub ldyconv_lower_order: CostReport,
}

/// Formula values only: `mults` holds the time column, `adds` is zero.
pub fn formula_costs(k: u64, f: u64, n: u64) -> CostFormulas {
    CostFormulas {
        conv: CostReport::new(k, k * n, 0, 0),
        dyconv: CostReport::new(k * k, k * k * n, 0, k * n),
        ldyconv: CostReport::new(k * (f + 1), k * n, 0, n + k),
        ldyconv_lower_order: CostReport::new(f * f + f + k + 6 * f, f * f, 0, 0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Ldyconv,
    Backbone(BackboneConfig),
}

const LAYER_KINDS: [&str; 2] = ["ldyconv", "backbone"];

/// Input geometry plus an ordered layer list.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountSpec {
    pub time: usize,
    pub freq: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Deserialize)]
struct RawSpec {
    time: usize,
    freq: usize,
    #[serde(default)]
    layers: Vec<toml::Value>,
}

impl CountSpec {
    pub fn from_model(cfg: &ModelConfig, time: usize) -> Self {
        let mut layers = Vec::new();
        if cfg.use_ldyconv {
            layers.push(LayerSpec::Ldyconv);
        }
        layers.push(LayerSpec::Backbone(cfg.backbone.clone()));
        Self {
            time,
            freq: cfg.freq,
            layers,
        }
    }

    /// The front-end alone at `time x freq`.
    pub fn front_end(time: usize, freq: usize) -> Self {
        Self {
            time,
            freq,
            layers: vec![LayerSpec::Ldyconv],
        }
    }

    /// Parses `time`, `freq` and `[[layers]]` tables keyed by `kind`.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let layers = raw
            .layers
            .into_iter()
            .map(|v| {
                let kind = v
                    .get("kind")
                    .and_then(|k| k.as_str())
                    .ok_or_else(|| Error::Config("layer without a kind".into()))?
                    .to_string();
                if !LAYER_KINDS.contains(&kind.as_str()) {
                    return Err(Error::UnknownLayer(kind));
                }
                v.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            time: raw.time,
            freq: raw.freq,
            layers,
        })
    }
}

/// Reads either a layer list (`time`, `freq`, `[[layers]]`) or a training
/// config, whose model is counted at `time` frames.
pub fn load_count_spec(path: &std::path::Path, time: usize) -> Result<CountSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if !is_json {
        let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if value.contains_key("layers") {
            return CountSpec::from_toml(&text);
        }
    }
    let cfg = crate::train::TrainConfig::load(path)?;
    Ok(CountSpec::from_model(&cfg.model, time))
}

/// Sum of valid taps over a line of `len` outputs for a kernel whose taps sit
/// at `offsets` relative to `stride * i`.
fn valid_taps(len_in: usize, len_out: usize, stride: usize, offsets: &[isize]) -> u64 {
    let mut total = 0;
    for i in 0..len_out {
        let centre = (i * stride) as isize;
        total += offsets
            .iter()
            .filter(|&&o| (0..len_in as isize).contains(&(centre + o)))
            .count() as u64;
    }
    total
}

/// Norm over `len` values in each of `groups` groups, plus `affine` parameters.
fn norm_cost(len: u64, groups: u64, affine: u64) -> CostReport {
    CostReport::new(2 * affine, groups * (3 * len + 4), groups * (4 * len - 1), 0)
}

fn front_end_breakdown(t: usize, f: usize) -> Vec<(String, CostReport)> {
    let (tu, fu, k) = (t as u64, f as u64, TAPS as u64);
    let n = tu * fu;
    let row_offsets: Vec<isize> = (0..3).map(|a| tap_offset(a * 3).0).collect();
    let col_offsets: Vec<isize> = (0..3).map(|b| tap_offset(b).1).collect();
    // Tap validity factorizes over the two axes.
    let conv_mults = valid_taps(t, t, 1, &row_offsets) * valid_taps(f, f, 1, &col_offsets);
    let conv = CostReport::ops(conv_mults, conv_mults - n);
    vec![
        ("pdf_conv".into(), conv + CostReport::params(k)),
        ("pdf_norm".into(), norm_cost(tu, fu, fu)),
        ("pdf_sigmoid".into(), CostReport::ops(n, 0)),
        ("idf_mean".into(), CostReport::ops(fu, fu * (tu - 1))),
        ("idf_fc1".into(), CostReport::new(fu * fu + fu, fu * fu, fu * fu, 0)),
        ("idf_norm".into(), norm_cost(fu, 1, fu)),
        ("idf_relu".into(), CostReport::ops(fu, 0)),
        ("idf_fc2".into(), CostReport::new(k * fu + k, k * fu, k * fu, 0)),
        ("compose".into(), CostReport::new(0, n * k, 0, n + k)),
        ("dynamic_conv".into(), conv),
        ("out_norm".into(), norm_cost(tu, fu, fu)),
        ("skip".into(), CostReport::ops(0, n)),
    ]
}

fn backbone_breakdown(t: usize, f: usize, cfg: &BackboneConfig) -> Vec<(String, CostReport)> {
    let c = cfg.channels as u64;
    let classes = cfg.classes as u64;
    let fu = f as u64;
    let centred = |k: usize| -> Vec<isize> { (0..k as isize).map(|j| j - (k / 2) as isize).collect() };
    let mut out = Vec::new();

    let stem_taps = valid_taps(t, t, 1, &centred(STEM_KERNEL)) * fu * c;
    out.push((
        "stem".to_string(),
        CostReport::new(STEM_KERNEL as u64 * fu * c, stem_taps, stem_taps - t as u64 * c, 0)
            + norm_cost(t as u64, c, c)
            + CostReport::ops(t as u64 * c, 0),
    ));

    let lengths = cfg.lengths(t);
    for b in 0..cfg.blocks {
        let (l_in, l_out) = (lengths[b], lengths[b + 1]);
        let (li, lo) = (l_in as u64, l_out as u64);
        let dw_taps = valid_taps(l_in, l_out, cfg.stride(b), &centred(TEMPORAL_KERNEL)) * c;
        let mut cost = CostReport::new(c * c, li * c * c, li * c * (c - 1), 0)
            + norm_cost(li, c, c)
            + CostReport::ops(li * c, 0)
            + CostReport::new(TEMPORAL_KERNEL as u64 * c, dw_taps, dw_taps - lo * c, 0)
            + norm_cost(lo, c, c)
            + CostReport::ops(lo * c, 0)
            + CostReport::new(c * c, lo * c * c, lo * c * (c - 1), 0)
            + norm_cost(lo, c, c)
            + CostReport::ops(lo * c, 0);
        if l_in == l_out {
            cost += CostReport::ops(0, lo * c);
        }
        out.push((format!("block{b}"), cost));
    }

    let last = *lengths.last().unwrap() as u64;
    out.push((
        "head".to_string(),
        CostReport::ops(c, c * (last - 1)) + CostReport::new(c * classes + classes, c * classes, c * classes, 0),
    ));
    out
}

/// Per-component costs, prefixed by layer (`ldyconv.pdf_conv`, `backbone.block0`, ...).
pub fn count_breakdown(spec: &CountSpec) -> Result<Vec<(String, CostReport)>> {
    if spec.layers.is_empty() {
        return Ok(Vec::new());
    }
    if spec.time == 0 || spec.freq == 0 {
        return Err(Error::Config("count: time and freq must be positive".into()));
    }
    let mut out = Vec::new();
    for layer in &spec.layers {
        match layer {
            LayerSpec::Ldyconv => {
                for (name, c) in front_end_breakdown(spec.time, spec.freq) {
                    out.push((format!("ldyconv.{name}"), c));
                }
            }
            LayerSpec::Backbone(cfg) => {
                if cfg.channels == 0 || cfg.classes == 0 {
                    return Err(Error::Config("count: backbone channels and classes must be positive".into()));
                }
                for (name, c) in backbone_breakdown(spec.time, spec.freq, cfg) {
                    out.push((format!("backbone.{name}"), c));
                }
            }
        }
    }
    Ok(out)
}

/// Totals of [`count_breakdown`]; `aux_space` is the largest single
/// requirement since layers run one after another.
pub fn count_model(spec: &CountSpec) -> Result<CostReport> {
    Ok(count_breakdown(spec)?.into_iter().map(|(_, c)| c).sum())
}

#[derive(Serialize, Deserialize)]
struct CostRow {
    component: String,
    params: u64,
    mults: u64,
    adds: u64,
    flops: u64,
    aux_space: u64,
}

/// `component,params,mults,adds,flops,aux_space`.
pub fn write_cost_csv<W: Write>(w: W, rows: &[(String, CostReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for (name, c) in rows {
        w.serialize(CostRow {
            component: name.clone(),
            params: c.params,
            mults: c.mults,
            adds: c.adds,
            flops: c.flops,
            aux_space: c.aux_space,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cost_csv<R: std::io::Read>(r: R) -> Result<Vec<(String, CostReport)>> {
    csv::Reader::from_reader(r)
        .deserialize::<CostRow>()
        .map(|row| {
            let row = row?;
            let c = CostReport::new(row.params, row.mults, row.adds, row.aux_space);
            if c.flops != row.flops {
                return Err(Error::Format(format!("{}: flops != mults + adds", row.component)));
            }
            Ok((row.component, c))
        })
        .collect()
}
