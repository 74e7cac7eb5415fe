//! Pre-norm transformer block shared by both encoders.

use crate::error::Result;
use crate::ops::{self, AttentionParams, LAYER_NORM_EPS};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNormParams {
    pub fn identity(width: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[width]),
            beta: Tensor::zeros(&[width]),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        ops::layer_norm(x, &self.gamma, &self.beta, LAYER_NORM_EPS)
    }

    pub fn input_grad(&self, x: &Tensor, g: &Tensor) -> Result<Tensor> {
        ops::layer_norm_vjp(x, &self.gamma, &self.beta, LAYER_NORM_EPS, g).map(|(dx, _, _)| dx)
    }
}

/// `h = x + attn(ln1(x))`, `out = h + relu(ln2(h)·W1 + b1)·W2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub fc1: Tensor,
    pub fc1_bias: Tensor,
    pub fc2: Tensor,
    pub fc2_bias: Tensor,
}

pub(crate) struct BlockCache {
    x: Tensor,
    attn_in: Tensor,
    h: Tensor,
    pre_act: Tensor,
}

impl Block {
    pub fn forward(&self, x: &Tensor, heads: usize) -> Result<Tensor> {
        self.forward_cached(x, heads).map(|(out, _)| out)
    }

    pub(crate) fn forward_cached(&self, x: &Tensor, heads: usize) -> Result<(Tensor, BlockCache)> {
        let attn_in = self.ln1.apply(x)?;
        let h = ops::add(x, &ops::multi_head_attention(&attn_in, &self.attn, heads)?)?;
        let mlp_in = self.ln2.apply(&h)?;
        let pre_act = ops::add(&ops::matmul(&mlp_in, &self.fc1)?, &self.fc1_bias)?;
        let mlp = ops::add(&ops::matmul(&ops::relu(&pre_act), &self.fc2)?, &self.fc2_bias)?;
        let out = ops::add(&h, &mlp)?;
        Ok((
            out,
            BlockCache {
                x: x.clone(),
                attn_in,
                h,
                pre_act,
            },
        ))
    }

    /// Gradient with respect to the block input only; weights stay frozen.
    pub(crate) fn input_grad(&self, cache: &BlockCache, heads: usize, g: &Tensor) -> Result<Tensor> {
        let d_act = ops::matmul_nt(g, &self.fc2)?;
        let d_pre = ops::relu_vjp(&cache.pre_act, &d_act)?;
        let d_mlp_in = ops::matmul_nt(&d_pre, &self.fc1)?;
        let mut dh = g.clone();
        dh.add_assign(&self.ln2.input_grad(&cache.h, &d_mlp_in)?)?;
        let (d_attn_in, _) = ops::multi_head_attention_vjp(&cache.attn_in, &self.attn, heads, &dh)?;
        let mut dx = dh;
        dx.add_assign(&self.ln1.input_grad(&cache.x, &d_attn_in)?)?;
        Ok(dx)
    }

    pub(crate) const TENSOR_NAMES: [&'static str; 16] = [
        "ln1.gamma",
        "ln1.beta",
        "attn.wq",
        "attn.bq",
        "attn.wk",
        "attn.bk",
        "attn.wv",
        "attn.bv",
        "attn.wo",
        "attn.bo",
        "ln2.gamma",
        "ln2.beta",
        "mlp.fc1",
        "mlp.fc1_bias",
        "mlp.fc2",
        "mlp.fc2_bias",
    ];

    fn tensors(&self) -> [&Tensor; 16] {
        let [wq, bq, wk, bk, wv, bv, wo, bo] = self.attn.tensors();
        [
            &self.ln1.gamma,
            &self.ln1.beta,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            &self.ln2.gamma,
            &self.ln2.beta,
            &self.fc1,
            &self.fc1_bias,
            &self.fc2,
            &self.fc2_bias,
        ]
    }

    pub(crate) fn named_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (name, t) in Self::TENSOR_NAMES.iter().zip(self.tensors()) {
            out.push((format!("{prefix}.{name}"), t));
        }
    }

    /// Shapes in `named_tensors` order for a block of the given width.
    pub(crate) fn shapes(width: usize) -> Vec<Vec<usize>> {
        let hidden = width * super::MLP_RATIO;
        let mut s = vec![vec![width], vec![width]];
        for _ in 0..4 {
            s.push(vec![width, width]);
            s.push(vec![width]);
        }
        s.extend([
            vec![width],
            vec![width],
            vec![width, hidden],
            vec![hidden],
            vec![hidden, width],
            vec![width],
        ]);
        s
    }

    pub(crate) fn from_tensors(mut it: impl Iterator<Item = Tensor>) -> Self {
        let mut next = || it.next().expect("block tensor count checked by caller");
        let ln1 = LayerNormParams {
            gamma: next(),
            beta: next(),
        };
        let attn = AttentionParams::from_tensors(std::array::from_fn(|_| next()));
        let ln2 = LayerNormParams {
            gamma: next(),
            beta: next(),
        };
        Self {
            ln1,
            attn,
            ln2,
            fc1: next(),
            fc1_bias: next(),
            fc2: next(),
            fc2_bias: next(),
        }
    }
}
