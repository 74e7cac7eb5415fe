use std::collections::BTreeMap;

use super::features::{class_targets, extract_features};
use super::probe::{diverged, gather, linear_probe_train, ProbeOutcome};
use super::prompt::{class_embeddings, class_embeddings_context_grad};
use super::state::{AdaptState, Model};
use super::{Mode, TrainConfig};
use crate::backbone::{BackboneParams, Vocab};
use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::ops;
use crate::rng::Prng;
use crate::tensor::Tensor;

pub(crate) const SHUFFLE_STREAM: u64 = 1;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam moments keyed by tensor name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub step: u64,
    slots: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, name: &str, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len(), "gradient size for `{name}`");
        let (m, v) = self
            .slots
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; grads.len()], vec![0.0; grads.len()]));
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for i in 0..params.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * grads[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * grads[i] * grads[i];
            params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
        }
    }
}

/// Loss gradients for every trainable the state carries.
#[derive(Clone, Debug)]
pub struct Grads {
    pub w_down: Option<Tensor>,
    pub w_up: Option<Tensor>,
    pub context: Option<Tensor>,
    pub log_inv_tau: f64,
    pub w_out: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub mode: Mode,
    /// Updated tensors and their scalar counts.
    pub updated: Vec<(String, usize)>,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Full-data loss after each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub outcome: Option<ProbeOutcome>,
}

impl TrainLog {
    pub(crate) fn new(mode: Mode, initial_loss: f64) -> Self {
        Self {
            mode,
            updated: Vec::new(),
            initial_loss,
            final_loss: initial_loss,
            epoch_losses: Vec::new(),
            steps: 0,
            outcome: None,
        }
    }

    pub fn updated_scalars(&self) -> usize {
        self.updated.iter().map(|(_, n)| n).sum()
    }
}

/// Mean cross-entropy of `labels` and its gradient for every trainable.
pub fn loss_and_grads(state: &AdaptState, backbone: &BackboneParams, x: &Tensor, labels: &[usize]) -> Result<(f64, Grads)> {
    let e = class_embeddings(backbone, &state.prompts)?;
    loss_and_grads_with(state, backbone, x, labels, &e)
}

/// As [`loss_and_grads`] with the class embeddings `e` already computed.
pub(crate) fn loss_and_grads_with(
    state: &AdaptState,
    backbone: &BackboneParams,
    x: &Tensor,
    labels: &[usize],
    e: &Tensor,
) -> Result<(f64, Grads)> {
    let y = state.adapt(x)?;
    let yh = state.head.project(&y)?;
    let sims = ops::cosine_similarity(&yh, e)?;
    let scale = state.head.logit_scale();
    let logits = sims.scale(scale);
    let loss = ops::cross_entropy(&logits, labels)?;

    let d_logits = ops::cross_entropy_vjp(&logits, labels, 1.0)?;
    let log_inv_tau = ops::dot(d_logits.data(), sims.data()) * scale;
    let (d_yh, d_e) = ops::cosine_similarity_vjp(&yh, e, &d_logits.scale(scale))?;
    let (d_y, w_out) = match &state.head.w_out {
        Some(w) => {
            let (dy, dw) = ops::matmul_vjp(&y, w, &d_yh)?;
            (dy, Some(dw))
        }
        None => (d_yh, None),
    };
    let (w_down, w_up) = match &state.adapter {
        Some(a) => {
            let g = a.vjp(x, &d_y)?;
            (Some(g.w_down), Some(g.w_up))
        }
        None => (None, None),
    };
    let context = if state.prompts.is_learned() {
        Some(class_embeddings_context_grad(backbone, &state.prompts, &d_e)?)
    } else {
        None
    };
    Ok((
        loss,
        Grads {
            w_down,
            w_up,
            context,
            log_inv_tau,
            w_out,
        },
    ))
}

/// Extracts features for `manifest` and trains the model `config.mode` asks for.
pub fn train(config: &TrainConfig, backbone: &BackboneParams, vocab: &Vocab, manifest: &Manifest) -> Result<(Model, TrainLog)> {
    config.validate()?;
    let labels = class_targets(manifest, &config.classes)?;
    let x = extract_features(backbone, manifest, config.variant)?;
    train_features(config, backbone, vocab, &x, &labels)
}

/// Training on precomputed tap-point features. The backbone is verified
/// untouched on exit.
pub fn train_features(
    config: &TrainConfig,
    backbone: &BackboneParams,
    vocab: &Vocab,
    x: &Tensor,
    labels: &[usize],
) -> Result<(Model, TrainLog)> {
    config.validate()?;
    let before = backbone.content_hash();
    let (n, w) = x.dims2()?;
    if n == 0 {
        return Err(Error::EmptyManifest);
    }
    if w != backbone.config.tap_width(config.variant) {
        return Err(Error::dim(format!(
            "features of width {w} do not match variant {} (width {})",
            config.variant,
            backbone.config.tap_width(config.variant)
        )));
    }
    let out = if config.mode == Mode::LinearProbe {
        let (probe, log) = linear_probe_train(config, x, labels)?;
        (Model::Probe(probe), log)
    } else {
        let (state, log) = train_adapt(config, backbone, vocab, x, labels)?;
        (Model::Adapt(state), log)
    };
    let after = backbone.content_hash();
    if before != after {
        return Err(Error::BackboneMutated { before, after });
    }
    Ok(out)
}

fn train_adapt(
    config: &TrainConfig,
    backbone: &BackboneParams,
    vocab: &Vocab,
    x: &Tensor,
    labels: &[usize],
) -> Result<(AdaptState, TrainLog)> {
    let mut state = AdaptState::init(config, &backbone.config, vocab)?;
    let frozen_e = if state.prompts.is_learned() {
        None
    } else {
        Some(class_embeddings(backbone, &state.prompts)?)
    };
    let embeddings = |s: &AdaptState| match &frozen_e {
        Some(e) => Ok(e.clone()),
        None => class_embeddings(backbone, &s.prompts),
    };
    let full_loss = |s: &AdaptState| -> Result<f64> {
        let e = embeddings(s)?;
        let y = s.head.project(&s.adapt(x)?)?;
        let logits = ops::cosine_similarity(&y, &e)?.scale(s.head.logit_scale());
        ops::cross_entropy(&logits, labels)
    };

    let initial = full_loss(&state)?;
    let mut log = TrainLog::new(config.mode, initial);
    log.updated = state.trainables().into_iter().map(|(n, c)| (n.to_string(), c)).collect();

    let mut rng = Prng::derive(config.seed, &[SHUFFLE_STREAM]);
    let mut order: Vec<usize> = (0..x.shape()[0]).collect();
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let xb = gather(x, chunk)?;
            let lb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let e = embeddings(&state)?;
            let (loss, grads) =
                loss_and_grads_with(&state, backbone, &xb, &lb, &e).map_err(|err| diverged(err, log.steps))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step: log.steps, loss });
            }
            state.apply(&grads, config.learning_rate)?;
            log.steps += 1;
        }
        log.epoch_losses.push(full_loss(&state).map_err(|err| diverged(err, log.steps))?);
    }
    log.final_loss = *log.epoch_losses.last().unwrap_or(&initial);
    Ok((state, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{BackboneConfig, Variant};

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut a = Adam::default();
        let mut p = [1.0, -2.0];
        a.begin_step();
        a.update("p", &mut p, &[0.5, -3.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 1.9).abs() < 1e-6);
    }

    fn setup(mode: Mode, variant: Variant) -> (TrainConfig, BackboneParams, Tensor, Vec<usize>) {
        let bb = BackboneParams::init_random(&BackboneConfig::default(), 3).unwrap();
        let cfg = TrainConfig {
            mode,
            variant,
            epochs: 2,
            batch_size: 16,
            learning_rate: 1e-2,
            context_len: 4,
            ..Default::default()
        };
        let w = bb.config.tap_width(variant);
        let mut rng = Prng::new(8);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..64 {
            let l = i % 2;
            let row: Vec<f64> = (0..w)
                .map(|k| rng.normal() + if k < 4 { 2.0 * l as f64 - 1.0 } else { 0.0 })
                .collect();
            rows.push(row);
            labels.push(l);
        }
        (cfg, bb, Tensor::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn two_epochs_reduce_loss_in_every_mode() {
        for mode in Mode::ALL {
            let (cfg, bb, x, labels) = setup(mode, Variant::V2);
            let (_, log) = train_features(&cfg, &bb, &Vocab::default_vocab(), &x, &labels).unwrap();
            assert!(log.final_loss < log.initial_loss, "{mode}: {log:?}");
            assert_eq!(log.steps, 8);
        }
    }

    #[test]
    fn adapter_only_updates_adapter_and_w_out() {
        let (cfg, bb, x, labels) = setup(Mode::AdapterOnly, Variant::V1);
        let (_, log) = train_features(&cfg, &bb, &Vocab::default_vocab(), &x, &labels).unwrap();
        let names: Vec<&str> = log.updated.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["adapter.W_down", "adapter.W_up", "head.W_out"]);
        let (cfg, bb, x, labels) = setup(Mode::AdapterOnly, Variant::V0);
        let (_, log) = train_features(&cfg, &bb, &Vocab::default_vocab(), &x, &labels).unwrap();
        let names: Vec<&str> = log.updated.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["adapter.W_down", "adapter.W_up"]);
    }

    #[test]
    fn same_seed_same_state() {
        let (cfg, bb, x, labels) = setup(Mode::AdaptPrompt, Variant::V2);
        let v = Vocab::default_vocab();
        let a = train_features(&cfg, &bb, &v, &x, &labels).unwrap().0;
        let b = train_features(&cfg, &bb, &v, &x, &labels).unwrap().0;
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn count_matches_updated_scalars() {
        for mode in Mode::ALL {
            for variant in Variant::ALL {
                let (cfg, bb, x, labels) = setup(mode, variant);
                let (_, log) = train_features(&cfg, &bb, &Vocab::default_vocab(), &x, &labels).unwrap();
                let n = super::super::count_params(&cfg, &bb.config);
                assert_eq!(n.trainable, log.updated_scalars(), "{mode} {variant}");
            }
        }
    }

    #[test]
    fn rejects_wrong_width_and_empty() {
        let (cfg, bb, x, labels) = setup(Mode::AdaptPrompt, Variant::V0);
        let cfg2 = TrainConfig {
            variant: Variant::V2,
            ..cfg.clone()
        };
        assert!(train_features(&cfg2, &bb, &Vocab::default_vocab(), &x, &labels).is_err());
        let empty = Tensor::zeros(&[0, x.shape()[1]]);
        assert!(matches!(
            train_features(&cfg, &bb, &Vocab::default_vocab(), &empty, &[]),
            Err(Error::EmptyManifest)
        ));
    }
}
