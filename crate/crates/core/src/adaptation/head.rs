use crate::error::{Error, Result};
use crate::ops;
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Upper bound on the logit scale `1/τ`.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// `τ = exp(-log_inv_tau)`.
    pub log_inv_tau: f64,
    /// `d_v × d` map from pre-projection features into the joint space.
    pub w_out: Option<Tensor>,
}

impl HeadParams {
    /// τ = 0.01; `W_out` drawn uniform(±1/sqrt(d_v)) when the widths differ.
    pub fn init(feature_width: usize, embed_dim: usize, with_w_out: bool, rng: &mut Prng) -> Result<Self> {
        let w_out = if with_w_out {
            let b = 1.0 / (feature_width as f64).sqrt();
            Some(Tensor::new(
                vec![feature_width, embed_dim],
                (0..feature_width * embed_dim).map(|_| rng.uniform(-b, b)).collect(),
            )?)
        } else {
            None
        };
        Ok(Self {
            log_inv_tau: MAX_LOGIT_SCALE.ln(),
            w_out,
        })
    }

    pub fn logit_scale(&self) -> f64 {
        self.log_inv_tau.exp()
    }

    pub fn clamp(&mut self) {
        self.log_inv_tau = self.log_inv_tau.min(MAX_LOGIT_SCALE.ln());
    }

    /// Maps features into the joint space (identity without `W_out`).
    pub fn project(&self, y: &Tensor) -> Result<Tensor> {
        match &self.w_out {
            Some(w) => ops::matmul(y, w),
            None => Ok(y.clone()),
        }
    }
}

/// `s / τ` where `s[b][c] = cos(Ŷ_b, E_c)`.
pub fn class_logits(y: &Tensor, e: &Tensor, head: &HeadParams) -> Result<Tensor> {
    let (_, w) = y.dims2()?;
    let (_, d) = e.dims2()?;
    if w != d && head.w_out.is_none() {
        return Err(Error::dim(format!(
            "feature width {w} differs from embedding width {d} and no W_out is present"
        )));
    }
    let sims = ops::cosine_similarity(&head.project(y)?, e)?;
    Ok(sims.scale(head.logit_scale()))
}

/// Temperature-scaled cosine softmax over classes.
pub fn class_probabilities(y: &Tensor, e: &Tensor, head: &HeadParams) -> Result<Tensor> {
    ops::softmax(&class_logits(y, e, head)?, 1)
}

/// Index of the largest entry; exact ties go to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
