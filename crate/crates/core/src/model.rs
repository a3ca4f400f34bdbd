//! Front-end plus backbone as one trainable unit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{argmax, backbone_backward, backbone_forward, cross_entropy, BackboneCache, BackboneConfig, BackboneParams};
use crate::error::{Error, Result};
use crate::ldy::{ldy_backward, ldy_forward, LdyCache, LdyInit, LdyParams};
use crate::numeric::gradcheck::{check_param_set, TensorCheck};
use crate::numeric::{ParamSet, Tensor};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Feature coefficients per frame.
    pub freq: usize,
    pub use_ldyconv: bool,
    pub ldy_init: LdyInit,
    #[serde(flatten)]
    pub backbone: BackboneConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            freq: 40,
            use_ldyconv: true,
            ldy_init: LdyInit::Standard,
            backbone: BackboneConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.freq == 0 || self.backbone.channels == 0 || self.backbone.classes < 2 {
            return Err(Error::Config(
                "model: freq and channels must be positive, classes >= 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub ldy: Option<LdyParams>,
    pub backbone: BackboneParams,
}

#[derive(Clone, Debug)]
pub struct ModelCache {
    ldy: Option<LdyCache>,
    backbone: BackboneCache,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let ldy = cfg
            .use_ldyconv
            .then(|| LdyParams::init(cfg.freq, cfg.ldy_init, rng));
        Self {
            ldy,
            backbone: BackboneParams::init(cfg.freq, &cfg.backbone, rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.backbone.config.classes
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Vec<f64>, ModelCache)> {
        let (front, ldy_cache) = match &self.ldy {
            Some(p) => {
                let (y, c) = ldy_forward(x, p)?;
                (y, Some(c))
            }
            None => (x.clone(), None),
        };
        let (logits, bb) = backbone_forward(&front, &self.backbone)?;
        Ok((
            logits,
            ModelCache {
                ldy: ldy_cache,
                backbone: bb,
            },
        ))
    }

    /// Gradients w.r.t. the input features and every parameter.
    pub fn backward(&self, cache: &ModelCache, grad_logits: &[f64]) -> Result<(Tensor, Model)> {
        let (dfront, bb) = backbone_backward(&self.backbone, &cache.backbone, grad_logits)?;
        let (dx, ldy) = match (&self.ldy, &cache.ldy) {
            (Some(p), Some(c)) => {
                let (dx, g) = ldy_backward(p, c, &dfront)?;
                (dx, Some(g))
            }
            (None, None) => (dfront, None),
            _ => return Err(Error::Contract("model cache/front-end mismatch".into())),
        };
        Ok((dx, Model { ldy, backbone: bb }))
    }

    /// Cross-entropy loss, parameter gradients and logits for one example.
    pub fn loss_and_grad(&self, x: &Tensor, label: usize) -> Result<(f64, Model, Vec<f64>)> {
        let (logits, cache) = self.forward(x)?;
        let (loss, gl) = cross_entropy(&logits, label);
        let (_, grads) = self.backward(&cache, &gl)?;
        Ok((loss, grads, logits))
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(&self.forward(x)?.0))
    }
}

impl ParamSet for Model {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.ldy.as_ref().map(|p| p.tensors()).unwrap_or_default();
        v.extend(self.backbone.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = self.ldy.as_mut().map(|p| p.tensors_mut()).unwrap_or_default();
        v.extend(self.backbone.tensors_mut());
        v
    }
}

/// Input length and width of the gradient-check fixture. Long enough that no
/// temporal norm sees a ReLU output that is active at every step.
pub const GRADCHECK_SHAPE: [usize; 2] = [32, 5];

/// Central-difference check of every parameter of a random front-end plus a
/// 2-block, 4-channel backbone, through the cross-entropy of one example.
pub fn gradcheck_suite(seed: u64, eps: f64) -> Result<Vec<TensorCheck>> {
    let mut rng = stream(seed, &[0x4743]);
    let freq = GRADCHECK_SHAPE[1];
    let model = Model {
        ldy: Some(LdyParams::random(freq, &mut rng)),
        backbone: BackboneParams::random(
            freq,
            &BackboneConfig {
                blocks: 2,
                channels: 4,
                classes: 12,
            },
            &mut rng,
        ),
    };
    let x = Tensor::uniform(&GRADCHECK_SHAPE, 1.0, &mut rng);
    let label = rng.gen_range(0..12);
    let (_, grads, _) = model.loss_and_grad(&x, label)?;
    check_param_set(&model, &grads, eps, |m| {
        m.loss_and_grad(&x, label).map(|r| r.0).unwrap_or(f64::NAN)
    })
}

/// Largest error per component: `ldy`, `backbone.stem`, `backbone.blockN`, `backbone.head`.
pub fn group_by_block(checks: &[TensorCheck]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for c in checks {
        let mut parts = c.name.split('.');
        let first = parts.next().unwrap_or_default();
        let group = match (first, parts.next()) {
            ("backbone", Some(second)) => {
                let second = second.split('_').next().unwrap_or(second);
                format!("backbone.{second}")
            }
            _ => first.to_string(),
        };
        match out.iter_mut().find(|g| g.0 == group) {
            Some(g) => g.1 = g.1.max(c.max_rel_error),
            None => out.push((group, c.max_rel_error)),
        }
    }
    out
}
