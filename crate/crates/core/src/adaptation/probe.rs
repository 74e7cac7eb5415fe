use std::fmt;

use super::train::{Adam, TrainLog};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::ops;
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Relative margin below the label-prior entropy that counts as learning.
const CONVERGENCE_MARGIN: f64 = 0.01;
/// Minimum epoch-over-epoch loss decrease that resets the patience counter.
const MIN_IMPROVEMENT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeOutcome {
    Converged,
    /// Loss never fell meaningfully below that of predicting the class prior.
    NotConverged,
}

impl fmt::Display for ProbeOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeOutcome::Converged => "converged",
            ProbeOutcome::NotConverged => "not_converged",
        })
    }
}

/// Multinomial logistic regression on frozen features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    /// `C × w`
    pub weight: Tensor,
    /// Length `C`.
    pub bias: Tensor,
}

impl LinearProbe {
    pub fn zeros(classes: usize, width: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[classes, width]),
            bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        ops::add(&ops::matmul_nt(x, &self.weight)?, &self.bias)
    }

    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        ops::softmax(&self.logits(x)?, 1)
    }

    fn loss_and_grads(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Tensor, Tensor)> {
        let logits = self.logits(x)?;
        let loss = ops::cross_entropy(&logits, labels)?;
        let d = ops::cross_entropy_vjp(&logits, labels, 1.0)?;
        let dw = ops::matmul_tn(&d, x)?;
        let (_, db) = ops::add_vjp(&ops::matmul_nt(x, &self.weight)?, &self.bias, &d)?;
        Ok((loss, dw, db))
    }
}

/// Entropy of the empirical label distribution: the loss of the best
/// feature-blind predictor.
fn prior_entropy(labels: &[usize], classes: usize) -> f64 {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Trains a logistic head with the shared optimizer. Stops once the
/// full-data loss has not improved for `config.patience` epochs.
pub fn linear_probe_train(config: &TrainConfig, x: &Tensor, labels: &[usize]) -> Result<(LinearProbe, TrainLog)> {
    config.validate()?;
    let (n, w) = x.dims2()?;
    if n == 0 {
        return Err(Error::EmptyManifest);
    }
    let c = config.classes.len();
    let mut probe = LinearProbe::zeros(c, w);
    let mut adam = Adam::default();
    let full_loss = |p: &LinearProbe| ops::cross_entropy(&p.logits(x)?, labels);
    let initial = full_loss(&probe)?;
    let mut log = TrainLog::new(config.mode, initial);
    log.updated = vec![("probe.weight".into(), c * w), ("probe.bias".into(), c)];

    let mut rng = Prng::derive(config.seed, &[super::train::SHUFFLE_STREAM]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = initial;
    let mut stale = 0;
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let xb = gather(x, chunk)?;
            let lb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, dw, db) = probe.loss_and_grads(&xb, &lb).map_err(|e| diverged(e, log.steps))?;
            adam.begin_step();
            adam.update("probe.weight", probe.weight.data_mut(), dw.data(), config.learning_rate);
            adam.update("probe.bias", probe.bias.data_mut(), db.data(), config.learning_rate);
            log.steps += 1;
            if !loss.is_finite() {
                return Err(Error::Divergence { step: log.steps, loss });
            }
        }
        let loss = full_loss(&probe).map_err(|e| diverged(e, log.steps))?;
        log.epoch_losses.push(loss);
        if loss < best - MIN_IMPROVEMENT {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                break;
            }
        }
    }
    log.final_loss = *log.epoch_losses.last().unwrap_or(&initial);
    let floor = prior_entropy(labels, c);
    log.outcome = Some(if best < floor * (1.0 - CONVERGENCE_MARGIN) {
        ProbeOutcome::Converged
    } else {
        ProbeOutcome::NotConverged
    });
    Ok((probe, log))
}

pub(crate) fn gather(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (_, w) = x.dims2()?;
    Tensor::stack_rows(idx.iter().map(|&i| x.row(i)), w)
}

pub(crate) fn diverged(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite(_) | Error::Degenerate(_) => Error::Divergence { step, loss: f64::NAN },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::{argmax, Mode};

    fn cfg() -> TrainConfig {
        TrainConfig {
            mode: Mode::LinearProbe,
            learning_rate: 0.05,
            batch_size: 8,
            epochs: 60,
            ..Default::default()
        }
    }

    fn toy() -> (Tensor, Vec<usize>) {
        let mut rng = Prng::new(11);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..64 {
            let l = i % 2;
            let cx = if l == 1 { 1.5 } else { -1.5 };
            rows.push(vec![cx + 0.4 * rng.normal(), 0.4 * rng.normal()]);
            labels.push(l);
        }
        (Tensor::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_toy_is_fit_exactly() {
        let (x, labels) = toy();
        let (probe, log) = linear_probe_train(&cfg(), &x, &labels).unwrap();
        let p = probe.probabilities(&x).unwrap();
        let correct = (0..x.shape()[0]).filter(|&i| argmax(p.row(i)) == labels[i]).count();
        assert_eq!(correct, 64);
        assert_eq!(log.outcome, Some(ProbeOutcome::Converged));
        assert!(log.final_loss < log.initial_loss);
    }

    #[test]
    fn zero_features_do_not_converge() {
        let x = Tensor::zeros(&[40, 5]);
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let (_, log) = linear_probe_train(&cfg(), &x, &labels).unwrap();
        assert_eq!(log.outcome, Some(ProbeOutcome::NotConverged));
        assert!(log.epoch_losses.len() < 60, "patience should stop early");
    }

    #[test]
    fn seeded_runs_match() {
        let (x, labels) = toy();
        let a = linear_probe_train(&cfg(), &x, &labels).unwrap().0;
        let b = linear_probe_train(&cfg(), &x, &labels).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn prior_entropy_values() {
        assert!((prior_entropy(&[0, 1], 2) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(prior_entropy(&[1, 1, 1], 2), 0.0);
    }
}
