//! Binary checkpoint: weights, optimizer moments, iteration and the config
//! they were trained under. All integers and floats are little-endian.
//!
//! ```text
//! "LDYC" | u16 version | [u8; 32] config hash | u64 iteration
//! u32 len | config JSON
//! u32 n | n x (u16 len | name | u8 dtype | u8 ndim | ndim x u32 | f64 data)
//! u32 n | n x (u16 len | name | u64 step | f64 beta1 | f64 beta2 | f64 eps | m | v)
//! u64 rng seed | u64 rng counter
//! ```
//! `m` and `v` carry no header; their shape is that of the named tensor.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::{AdamState, ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"LDYC";
pub const VERSION: u16 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub iteration: u64,
    pub model: Model,
    /// One state per model tensor, in `Model::tensors` order.
    pub adam: Vec<AdamState>,
    pub rng_seed: u64,
    pub rng_counter: u64,
}

impl Checkpoint {
    pub fn fresh(config: TrainConfig, model: Model) -> Self {
        let adam = model.tensors().iter().map(|(_, t)| AdamState::new(t.shape())).collect();
        let rng_seed = config.seed;
        Self {
            config,
            iteration: 0,
            model,
            adam,
            rng_seed,
            rng_counter: 0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config.hash());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);

        let tensors = self.model.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            put_name(&mut out, name);
            out.push(DTYPE_F64);
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_f64s(&mut out, t.data());
        }
        out.extend_from_slice(&(self.adam.len() as u32).to_le_bytes());
        for ((name, _), s) in tensors.iter().zip(&self.adam) {
            put_name(&mut out, name);
            out.extend_from_slice(&s.step.to_le_bytes());
            for x in [s.beta1, s.beta2, s.epsilon] {
                out.extend_from_slice(&x.to_le_bytes());
            }
            put_f64s(&mut out, s.m.data());
            put_f64s(&mut out, s.v.data());
        }
        out.extend_from_slice(&self.rng_seed.to_le_bytes());
        out.extend_from_slice(&self.rng_counter.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let iteration = r.u64()?;
        let json_len = r.u32()? as usize;
        let config: TrainConfig = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        if config.hash() != hash {
            return Err(Error::Format("checkpoint config does not match its hash".into()));
        }

        let mut model = Model::init(&config.model, &mut ChaCha8Rng::seed_from_u64(0));
        let n = r.u32()? as usize;
        {
            let mut slots = model.tensors_mut();
            if n != slots.len() {
                return Err(Error::Format(format!(
                    "checkpoint has {n} tensors, model expects {}",
                    slots.len()
                )));
            }
            for (name, slot) in slots.iter_mut() {
                let got = r.name()?;
                if &got != name {
                    return Err(Error::Format(format!("expected tensor {name}, found {got}")));
                }
                let dtype = r.u8()?;
                if dtype != DTYPE_F64 {
                    return Err(Error::Format(format!("{name}: unsupported dtype {dtype}")));
                }
                let ndim = r.u8()? as usize;
                let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                if shape != slot.shape() {
                    return Err(Error::Format(format!(
                        "{name}: shape {shape:?}, model expects {:?}",
                        slot.shape()
                    )));
                }
                let data = r.f64s(slot.len())?;
                **slot = Tensor::from_vec(&shape, data)?;
            }
        }

        let tensors = model.tensors();
        let n_adam = r.u32()? as usize;
        if n_adam != tensors.len() {
            return Err(Error::Format(format!("{n_adam} optimizer states for {} tensors", tensors.len())));
        }
        let mut adam = Vec::with_capacity(n_adam);
        for (name, t) in &tensors {
            let got = r.name()?;
            if &got != name {
                return Err(Error::Format(format!("expected optimizer state {name}, found {got}")));
            }
            let step = r.u64()?;
            let beta1 = r.f64()?;
            let beta2 = r.f64()?;
            let epsilon = r.f64()?;
            let m = Tensor::from_vec(t.shape(), r.f64s(t.len())?)?;
            let v = Tensor::from_vec(t.shape(), r.f64s(t.len())?)?;
            adam.push(AdamState { m, v, step, beta1, beta2, epsilon });
        }
        let rng_seed = r.u64()?;
        let rng_counter = r.u64()?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            iteration,
            model,
            adam,
            rng_seed,
            rng_counter,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Number of weight scalars stored in a serialized checkpoint, read from the
/// tensor headers alone.
pub fn serialized_param_scalars(bytes: &[u8]) -> Result<usize> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    r.u16()?;
    r.take(32)?;
    r.u64()?;
    let json_len = r.u32()? as usize;
    r.take(json_len)?;
    let n = r.u32()? as usize;
    let mut total = 0;
    for _ in 0..n {
        r.name()?;
        r.u8()?;
        let ndim = r.u8()? as usize;
        let mut len = 1usize;
        for _ in 0..ndim {
            len *= r.u32()? as usize;
        }
        r.take(len * 8)?;
        total += len;
    }
    Ok(total)
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, data: &[f64]) {
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("tensor name is not utf-8".into()))
    }
}
