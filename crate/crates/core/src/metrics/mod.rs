//! Average precision, thresholded accuracy, report aggregation and
//! attribution scoring.

pub mod aggregate;
pub mod confusion;

use crate::data::{Family, Label, Manifest};
use crate::error::{Error, Result};

pub use aggregate::{aggregate, evaluate, parse_groups, DatasetRow, EvalReport, FamilyRow, SubconfigGroups};
pub use confusion::{attribution_metrics, confusion_matrix, ConfusionMatrix};

/// Decision threshold on P(fake); exactly 0.5 counts as real.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    /// P(fake) in [0, 1].
    pub score: f64,
    pub label: Label,
    pub generator: String,
    pub family: Option<Family>,
    pub tags: Vec<String>,
}

impl ScoredSample {
    pub fn is_fake(&self) -> bool {
        self.label == Label::Fake
    }
}

/// Pairs manifest records with model scores, in record order.
pub fn scored_samples(manifest: &Manifest, scores: &[f64]) -> Result<Vec<ScoredSample>> {
    if scores.len() != manifest.len() {
        return Err(Error::dim(format!(
            "{} scores for {} records",
            scores.len(),
            manifest.len()
        )));
    }
    manifest
        .records
        .iter()
        .zip(scores)
        .map(|(r, &score)| {
            if !(0.0..=1.0).contains(&score) {
                return Err(Error::NonFinite(format!("score {score} for `{}`", r.relative_path)));
            }
            Ok(ScoredSample {
                score,
                label: r.label,
                generator: r.generator.clone(),
                family: r.family,
                tags: r.tags.clone(),
            })
        })
        .collect()
}

/// Non-interpolated AP: mean precision at the rank of each positive, with
/// equal scores kept in input order.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::dim("scores and labels differ in length"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 || n_pos == positive.len() {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive and one negative".into(),
        ));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Fraction of samples whose thresholded prediction matches the label.
pub fn accuracy(scores: &[f64], positive: &[bool], threshold: f64) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::dim("scores and labels differ in length"));
    }
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let correct = scores
        .iter()
        .zip(positive)
        .filter(|(&s, &p)| (s > threshold) == p)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// `(AP, accuracy)` over a sample set.
pub fn ap_and_accuracy(samples: &[&ScoredSample]) -> Result<(f64, f64)> {
    let scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
    let labels: Vec<bool> = samples.iter().map(|s| s.is_fake()).collect();
    Ok((
        average_precision(&scores, &labels)?,
        accuracy(&scores, &labels, THRESHOLD)?,
    ))
}

/// Metrics restricted to samples that carry (`present`) or lack the tag.
pub fn tag_subset_eval(samples: &[ScoredSample], tag: &str, present: bool) -> Result<(f64, f64)> {
    let subset: Vec<&ScoredSample> = samples
        .iter()
        .filter(|s| s.tags.iter().any(|t| t == tag) == present)
        .collect();
    if subset.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "no samples {} tag `{tag}`",
            if present { "with" } else { "without" }
        )));
    }
    ap_and_accuracy(&subset)
}
