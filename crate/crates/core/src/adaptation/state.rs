use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::adapter::AdapterParams;
use super::head::{class_probabilities, HeadParams};
use super::probe::LinearProbe;
use super::prompt::{class_embeddings, PromptParams};
use super::train::{Adam, Grads};
use super::{Mode, TrainConfig};
use crate::backbone::weights::{decode_tensors, encode_tensors};
use crate::backbone::{BackboneConfig, BackboneParams, Variant, Vocab};
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

pub const W_DOWN: &str = "adapter.W_down";
pub const W_UP: &str = "adapter.W_up";
pub const CONTEXT: &str = "prompt.context";
pub const LOG_INV_TAU: &str = "head.log_inv_tau";
pub const W_OUT: &str = "head.W_out";
pub const PROBE_WEIGHT: &str = "probe.weight";
pub const PROBE_BIAS: &str = "probe.bias";

const INIT_STREAM: u64 = 0;

/// Everything the optimizer touches, plus its moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptState {
    pub mode: Mode,
    /// Absent when the adapter is bypassed (`Y = X`).
    pub adapter: Option<AdapterParams>,
    pub prompts: PromptParams,
    pub head: HeadParams,
    pub moments: Adam,
}

impl AdaptState {
    pub fn init(config: &TrainConfig, backbone: &BackboneConfig, vocab: &Vocab) -> Result<Self> {
        config.validate()?;
        if config.mode == Mode::LinearProbe {
            return Err(Error::InvalidConfig("linear_probe has no adaptation state".into()));
        }
        let mut rng = Prng::derive(config.seed, &[INIT_STREAM]);
        let d_in = backbone.tap_width(config.variant);
        let adapter = if config.mode.uses_adapter() {
            Some(AdapterParams::init(d_in, config.resolved_d_mid(d_in), config.alpha, &mut rng)?)
        } else {
            None
        };
        let prompts = if config.mode.learns_prompts() {
            PromptParams::learned(vocab, &config.classes, config.context_len, backbone.text_width, &mut rng)?
        } else {
            PromptParams::fixed(vocab, &config.classes, backbone.text_width)?
        };
        let head = HeadParams::init(d_in, backbone.embed_dim, config.variant != Variant::V0, &mut rng)?;
        Ok(Self {
            mode: config.mode,
            adapter,
            prompts,
            head,
            moments: Adam::default(),
        })
    }

    /// Names and sizes of the tensors this mode updates.
    pub fn trainables(&self) -> Vec<(&'static str, usize)> {
        let mut out = Vec::new();
        if let Some(a) = &self.adapter {
            out.push((W_DOWN, a.w_down.len()));
            out.push((W_UP, a.w_up.len()));
        }
        if self.mode.learns_prompts() {
            if self.prompts.context_len() > 0 {
                out.push((CONTEXT, self.prompts.context.len()));
            }
            out.push((LOG_INV_TAU, 1));
        }
        if let Some(w) = &self.head.w_out {
            out.push((W_OUT, w.len()));
        }
        out
    }

    pub fn trainable_count(&self) -> usize {
        self.trainables().iter().map(|(_, n)| n).sum()
    }

    /// One Adam step on the trainable set, then the temperature clamp.
    pub fn apply(&mut self, grads: &Grads, lr: f64) -> Result<()> {
        self.moments.begin_step();
        for (name, _) in self.trainables() {
            let missing = || Error::InvalidConfig(format!("no gradient for `{name}`"));
            match name {
                W_DOWN | W_UP => {
                    let a = self.adapter.as_mut().ok_or_else(missing)?;
                    let (p, g) = if name == W_DOWN {
                        (&mut a.w_down, grads.w_down.as_ref())
                    } else {
                        (&mut a.w_up, grads.w_up.as_ref())
                    };
                    self.moments.update(name, p.data_mut(), g.ok_or_else(missing)?.data(), lr);
                }
                CONTEXT => {
                    let g = grads.context.as_ref().ok_or_else(missing)?;
                    self.moments.update(name, self.prompts.context.data_mut(), g.data(), lr);
                }
                LOG_INV_TAU => {
                    let g = [grads.log_inv_tau];
                    self.moments.update(name, std::slice::from_mut(&mut self.head.log_inv_tau), &g, lr);
                }
                W_OUT => {
                    let g = grads.w_out.as_ref().ok_or_else(missing)?;
                    let w = self.head.w_out.as_mut().ok_or_else(missing)?;
                    self.moments.update(name, w.data_mut(), g.data(), lr);
                }
                _ => unreachable!("unlisted trainable"),
            }
        }
        self.head.clamp();
        Ok(())
    }

    /// Adapted features `Y` (equal to `X` when the adapter is bypassed).
    pub fn adapt(&self, x: &Tensor) -> Result<Tensor> {
        match &self.adapter {
            Some(a) => a.forward(x),
            None => Ok(x.clone()),
        }
    }

    pub fn predict_proba(&self, backbone: &BackboneParams, x: &Tensor) -> Result<Tensor> {
        let e = class_embeddings(backbone, &self.prompts)?;
        class_probabilities(&self.adapt(x)?, &e, &self.head)
    }

    /// Named tensors in state-file order.
    pub fn tensors(&self) -> Vec<(&'static str, Tensor)> {
        let mut out = Vec::new();
        if let Some(a) = &self.adapter {
            out.push((W_DOWN, a.w_down.clone()));
            out.push((W_UP, a.w_up.clone()));
        }
        out.push((CONTEXT, self.prompts.context.clone()));
        out.push((LOG_INV_TAU, Tensor::vector(vec![self.head.log_inv_tau])));
        if let Some(w) = &self.head.w_out {
            out.push((W_OUT, w.clone()));
        }
        out
    }

    fn from_tensors(config: &TrainConfig, vocab: &Vocab, mut t: HashMap<String, Tensor>) -> Result<Self> {
        let mut take = |name: &str| t.remove(name);
        let need = |v: Option<Tensor>, name: &str| {
            v.ok_or_else(|| Error::Format(format!("state file lacks `{name}`")))
        };
        let adapter = if config.mode.uses_adapter() {
            let down = need(take(W_DOWN), W_DOWN)?;
            let up = need(take(W_UP), W_UP)?;
            Some(AdapterParams::new(down, up, config.alpha)?)
        } else {
            None
        };
        let context = need(take(CONTEXT), CONTEXT)?;
        let (m, de) = context.dims2()?;
        let mut prompts = if config.mode.learns_prompts() {
            PromptParams::learned(vocab, &config.classes, 0, de, &mut Prng::new(0))?
        } else {
            PromptParams::fixed(vocab, &config.classes, de)?
        };
        if m > 0 {
            if !prompts.is_learned() {
                return Err(Error::Format("fixed prompts cannot carry context vectors".into()));
            }
            prompts.context = context;
        }
        let tau = need(take(LOG_INV_TAU), LOG_INV_TAU)?;
        if tau.len() != 1 {
            return Err(Error::Format("log_inv_tau must hold one value".into()));
        }
        let head = HeadParams {
            log_inv_tau: tau.data()[0],
            w_out: take(W_OUT),
        };
        if (config.variant == Variant::V0) == head.w_out.is_some() {
            return Err(Error::Format(format!("W_out presence inconsistent with variant {}", config.variant)));
        }
        if let Some(extra) = t.keys().next() {
            return Err(Error::Format(format!("unexpected tensor `{extra}` in state file")));
        }
        Ok(Self {
            mode: config.mode,
            adapter,
            prompts,
            head,
            moments: Adam::default(),
        })
    }
}

/// A trained classifier of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Adapt(AdaptState),
    Probe(LinearProbe),
}

impl Model {
    /// `N × C` class probabilities for tap-point features `x`.
    pub fn predict_proba(&self, backbone: &BackboneParams, x: &Tensor) -> Result<Tensor> {
        match self {
            Model::Adapt(s) => s.predict_proba(backbone, x),
            Model::Probe(p) => p.probabilities(x),
        }
    }

    /// Probability of class 1 (fake) per row.
    pub fn predict_scores(&self, backbone: &BackboneParams, x: &Tensor) -> Result<Vec<f64>> {
        let p = self.predict_proba(backbone, x)?;
        let (n, c) = p.dims2()?;
        if c != 2 {
            return Err(Error::InvalidConfig(format!("fake scores need a 2-class model, got {c} classes")));
        }
        Ok((0..n).map(|i| p.at2(i, 1)).collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = match self {
            Model::Adapt(s) => s.tensors(),
            Model::Probe(p) => vec![(PROBE_WEIGHT, p.weight.clone()), (PROBE_BIAS, p.bias.clone())],
        };
        encode_tensors(tensors.iter().map(|(n, t)| (*n, t)))
    }

    pub fn from_bytes(bytes: &[u8], config: &TrainConfig, vocab: &Vocab) -> Result<Self> {
        let t: HashMap<String, Tensor> = decode_tensors(bytes)?.into_iter().collect();
        if config.mode == Mode::LinearProbe {
            let get = |n: &str| {
                t.get(n)
                    .cloned()
                    .ok_or_else(|| Error::Format(format!("state file lacks `{n}`")))
            };
            let weight = get(PROBE_WEIGHT)?;
            let bias = get(PROBE_BIAS)?;
            let (c, _) = weight.dims2()?;
            if bias.shape() != [c] || t.len() != 2 {
                return Err(Error::Format("malformed linear probe".into()));
            }
            Ok(Model::Probe(LinearProbe { weight, bias }))
        } else {
            AdaptState::from_tensors(config, vocab, t).map(Model::Adapt)
        }
    }

    /// Writes the tensor container and a `key=value` sidecar next to it.
    pub fn save(&self, path: &Path, config: &TrainConfig) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        std::fs::write(&side, config.to_kv()).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path, vocab: &Vocab) -> Result<(Self, TrainConfig)> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let config = TrainConfig::from_kv(&text)?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::from_bytes(&bytes, &config, vocab)?, config))
    }
}

/// `<state>.cfg`
pub fn sidecar_path(state: &Path) -> PathBuf {
    let mut s = state.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}
