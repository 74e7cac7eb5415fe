//! Frozen dual encoder: a ViT-style vision tower with three tap points and a
//! small text tower that is differentiable with respect to its input
//! embedding sequence.

mod block;
pub mod vocab;
pub mod weights;

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

pub use block::{Block, LayerNormParams};
pub use vocab::Vocab;

use crate::error::{Error, Result};
use crate::ops::{self, AttentionParams};
use crate::rng::Prng;
use crate::tensor::Tensor;

pub(crate) const MLP_RATIO: usize = 4;

/// Vision tap point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// All blocks, final norm, projection (width `d`).
    V0,
    /// All blocks, final norm, no projection (width `d_v`).
    V1,
    /// Final block dropped, final norm kept, no projection (width `d_v`).
    V2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::V0, Variant::V1, Variant::V2];

    fn code(self) -> u32 {
        match self {
            Variant::V0 => 0,
            Variant::V1 => 1,
            Variant::V2 => 2,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(Variant::V0),
            1 => Ok(Variant::V1),
            2 => Ok(Variant::V2),
            _ => Err(Error::InvalidConfig(format!("unknown variant code {c}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.code())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v0" => Ok(Variant::V0),
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            other => Err(Error::InvalidConfig(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    /// `d_v`
    pub vision_width: usize,
    pub vision_layers: usize,
    pub vision_heads: usize,
    /// `d_e`
    pub text_width: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    /// Joint embedding width `d`.
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub variant: Variant,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            vision_width: 64,
            vision_layers: 4,
            vision_heads: 4,
            text_width: 48,
            text_layers: 2,
            text_heads: 4,
            embed_dim: 32,
            vocab_size: Vocab::default_tokens().len(),
            max_seq_len: 24,
            variant: Variant::V2,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} is not a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        for (name, w, h) in [
            ("vision", self.vision_width, self.vision_heads),
            ("text", self.text_width, self.text_heads),
        ] {
            if w == 0 || h == 0 || w % h != 0 {
                return bad(format!("{name} width {w} is not divisible by {h} heads"));
            }
        }
        if self.vision_layers == 0 || self.text_layers == 0 {
            return bad("encoders need at least one block".into());
        }
        if self.variant == Variant::V2 && self.vision_layers < 2 {
            return bad("variant v2 drops the final block and needs vision_layers >= 2".into());
        }
        if self.embed_dim == 0 || self.vocab_size == 0 {
            return bad("embed_dim and vocab_size must be positive".into());
        }
        if self.max_seq_len < 3 {
            return bad("max_seq_len must be at least 3 (BOS, CLASS, EOS)".into());
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    /// Width of the vision feature at `variant`.
    pub fn tap_width(&self, variant: Variant) -> usize {
        match variant {
            Variant::V0 => self.embed_dim,
            Variant::V1 | Variant::V2 => self.vision_width,
        }
    }

    /// Exact number of frozen backbone scalars.
    pub fn param_count(&self) -> usize {
        fn block(w: usize) -> usize {
            Block::shapes(w).iter().map(|s| s.iter().product::<usize>()).sum()
        }
        let p = self.patch_size;
        let vision = p * p * self.vision_width
            + self.vision_width
            + (self.num_patches() + 1) * self.vision_width
            + self.vision_layers * block(self.vision_width)
            + 2 * self.vision_width
            + self.vision_width * self.embed_dim;
        let text = self.vocab_size * self.text_width
            + self.max_seq_len * self.text_width
            + self.text_layers * block(self.text_width)
            + 2 * self.text_width
            + self.text_width * self.embed_dim;
        vision + text
    }

    pub(crate) fn to_codes(&self) -> Vec<f64> {
        [
            self.image_size,
            self.patch_size,
            self.vision_width,
            self.vision_layers,
            self.vision_heads,
            self.text_width,
            self.text_layers,
            self.text_heads,
            self.embed_dim,
            self.vocab_size,
            self.max_seq_len,
            self.variant.code() as usize,
        ]
        .iter()
        .map(|&v| v as f64)
        .collect()
    }

    pub(crate) fn from_codes(c: &[f64]) -> Result<Self> {
        if c.len() != 12 || c.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(Error::Format("malformed embedded config".into()));
        }
        let u = |i: usize| c[i] as usize;
        let cfg = Self {
            image_size: u(0),
            patch_size: u(1),
            vision_width: u(2),
            vision_layers: u(3),
            vision_heads: u(4),
            text_width: u(5),
            text_layers: u(6),
            text_heads: u(7),
            embed_dim: u(8),
            vocab_size: u(9),
            max_seq_len: u(10),
            variant: Variant::from_code(u(11) as u32)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisionParams {
    /// `patch_size² × d_v`, no bias.
    pub patch_embed: Tensor,
    pub class_token: Tensor,
    pub pos_embed: Tensor,
    pub blocks: Vec<Block>,
    pub ln_post: LayerNormParams,
    /// `d_v × d`
    pub proj: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextParams {
    pub token_embed: Tensor,
    pub pos_embed: Tensor,
    pub blocks: Vec<Block>,
    pub ln_final: LayerNormParams,
    /// `d_e × d`
    pub proj: Tensor,
}

/// Frozen encoder weights. Nothing in this crate mutates them after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    pub config: BackboneConfig,
    pub vision: VisionParams,
    pub text: TextParams,
}

/// Rounds through `f32` so freshly initialized weights equal their on-disk form.
fn f32_exact(t: Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}

fn uniform_linear(rng: &mut Prng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect();
    f32_exact(Tensor::new(vec![fan_in, fan_out], data).expect("sized"))
}

fn gaussian(rng: &mut Prng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.normal() * std).collect();
    f32_exact(Tensor::new(shape.to_vec(), data).expect("sized"))
}

fn init_block(rng: &mut Prng, width: usize) -> Block {
    let hidden = width * MLP_RATIO;
    let mut lin = |i, o| uniform_linear(rng, i, o);
    let attn = AttentionParams {
        wq: lin(width, width),
        bq: Tensor::zeros(&[width]),
        wk: lin(width, width),
        bk: Tensor::zeros(&[width]),
        wv: lin(width, width),
        bv: Tensor::zeros(&[width]),
        wo: lin(width, width),
        bo: Tensor::zeros(&[width]),
    };
    Block {
        ln1: LayerNormParams::identity(width),
        attn,
        ln2: LayerNormParams::identity(width),
        fc1: lin(width, hidden),
        fc1_bias: Tensor::zeros(&[hidden]),
        fc2: lin(hidden, width),
        fc2_bias: Tensor::zeros(&[width]),
    }
}

impl BackboneParams {
    /// Seeded initialization: linear weights uniform(±1/sqrt(fan_in)), biases
    /// zero, norm gains one; class/positional embeddings Gaussian with std
    /// `d_v^-1/2`, token embeddings std 0.02, text positions std 0.01.
    pub fn init_random(config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Prng::new(seed);
        let dv = config.vision_width;
        let de = config.text_width;
        let p2 = config.patch_size * config.patch_size;
        let vscale = 1.0 / (dv as f64).sqrt();

        let vision = VisionParams {
            patch_embed: uniform_linear(&mut rng, p2, dv),
            class_token: gaussian(&mut rng, &[dv], vscale),
            pos_embed: gaussian(&mut rng, &[config.num_patches() + 1, dv], vscale),
            blocks: (0..config.vision_layers).map(|_| init_block(&mut rng, dv)).collect(),
            ln_post: LayerNormParams::identity(dv),
            proj: uniform_linear(&mut rng, dv, config.embed_dim),
        };
        let text = TextParams {
            token_embed: gaussian(&mut rng, &[config.vocab_size, de], 0.02),
            pos_embed: gaussian(&mut rng, &[config.max_seq_len, de], 0.01),
            blocks: (0..config.text_layers).map(|_| init_block(&mut rng, de)).collect(),
            ln_final: LayerNormParams::identity(de),
            proj: uniform_linear(&mut rng, de, config.embed_dim),
        };
        Ok(Self {
            config: config.clone(),
            vision,
            text,
        })
    }

    /// Every weight tensor with its canonical name, in file order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("vision.patch_embed".into(), &self.vision.patch_embed),
            ("vision.class_token".into(), &self.vision.class_token),
            ("vision.pos_embed".into(), &self.vision.pos_embed),
        ];
        for (i, b) in self.vision.blocks.iter().enumerate() {
            b.named_tensors(&format!("vision.blocks.{i}"), &mut out);
        }
        out.push(("vision.ln_post.gamma".into(), &self.vision.ln_post.gamma));
        out.push(("vision.ln_post.beta".into(), &self.vision.ln_post.beta));
        out.push(("vision.proj".into(), &self.vision.proj));
        out.push(("text.token_embed".into(), &self.text.token_embed));
        out.push(("text.pos_embed".into(), &self.text.pos_embed));
        for (i, b) in self.text.blocks.iter().enumerate() {
            b.named_tensors(&format!("text.blocks.{i}"), &mut out);
        }
        out.push(("text.ln_final.gamma".into(), &self.text.ln_final.gamma));
        out.push(("text.ln_final.beta".into(), &self.text.ln_final.beta));
        out.push(("text.proj".into(), &self.text.proj));
        out
    }

    /// Expected `(name, shape)` list for a config, in file order.
    pub(crate) fn expected_layout(config: &BackboneConfig) -> Vec<(String, Vec<usize>)> {
        let dv = config.vision_width;
        let de = config.text_width;
        let p2 = config.patch_size * config.patch_size;
        let mut out = vec![
            ("vision.patch_embed".to_string(), vec![p2, dv]),
            ("vision.class_token".to_string(), vec![dv]),
            ("vision.pos_embed".to_string(), vec![config.num_patches() + 1, dv]),
        ];
        let block_names = |prefix: String| {
            Block::TENSOR_NAMES
                .iter()
                .map(move |n| format!("{prefix}.{n}"))
                .collect::<Vec<_>>()
        };
        for i in 0..config.vision_layers {
            for (n, s) in block_names(format!("vision.blocks.{i}")).into_iter().zip(Block::shapes(dv)) {
                out.push((n, s));
            }
        }
        out.push(("vision.ln_post.gamma".into(), vec![dv]));
        out.push(("vision.ln_post.beta".into(), vec![dv]));
        out.push(("vision.proj".into(), vec![dv, config.embed_dim]));
        out.push(("text.token_embed".into(), vec![config.vocab_size, de]));
        out.push(("text.pos_embed".into(), vec![config.max_seq_len, de]));
        for i in 0..config.text_layers {
            for (n, s) in block_names(format!("text.blocks.{i}")).into_iter().zip(Block::shapes(de)) {
                out.push((n, s));
            }
        }
        out.push(("text.ln_final.gamma".into(), vec![de]));
        out.push(("text.ln_final.beta".into(), vec![de]));
        out.push(("text.proj".into(), vec![de, config.embed_dim]));
        out
    }

    /// Inverse of `named_tensors`; tensors must already match `expected_layout`.
    pub(crate) fn from_ordered(config: BackboneConfig, tensors: Vec<Tensor>) -> Self {
        let mut it = tensors.into_iter();
        let patch_embed = it.next().unwrap();
        let class_token = it.next().unwrap();
        let pos_embed = it.next().unwrap();
        let per_block = Block::TENSOR_NAMES.len();
        let vblocks = (0..config.vision_layers)
            .map(|_| Block::from_tensors(it.by_ref().take(per_block).collect::<Vec<_>>().into_iter()))
            .collect();
        let ln_post = LayerNormParams {
            gamma: it.next().unwrap(),
            beta: it.next().unwrap(),
        };
        let vproj = it.next().unwrap();
        let token_embed = it.next().unwrap();
        let tpos = it.next().unwrap();
        let tblocks = (0..config.text_layers)
            .map(|_| Block::from_tensors(it.by_ref().take(per_block).collect::<Vec<_>>().into_iter()))
            .collect();
        let ln_final = LayerNormParams {
            gamma: it.next().unwrap(),
            beta: it.next().unwrap(),
        };
        let tproj = it.next().unwrap();
        Self {
            config,
            vision: VisionParams {
                patch_embed,
                class_token,
                pos_embed,
                blocks: vblocks,
                ln_post,
                proj: vproj,
            },
            text: TextParams {
                token_embed,
                pos_embed: tpos,
                blocks: tblocks,
                ln_final,
                proj: tproj,
            },
        }
    }

    /// SHA-256 over names, shapes and exact `f64` bit patterns (hex).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.named_tensors() {
            h.update(name.as_bytes());
            for &e in t.shape() {
                h.update((e as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Splits a square image into row-major flattened patches (`P × patch²`).
    fn patchify(&self, image: &Tensor) -> Result<Tensor> {
        let s = self.config.image_size;
        if image.len() != s * s {
            return Err(Error::dim(format!(
                "image has {} pixels, expected {s}x{s}",
                image.len()
            )));
        }
        let p = self.config.patch_size;
        let g = s / p;
        let px = image.data();
        let mut out = Vec::with_capacity(s * s);
        for gy in 0..g {
            for gx in 0..g {
                for y in 0..p {
                    let start = (gy * p + y) * s + gx * p;
                    out.extend_from_slice(&px[start..start + p]);
                }
            }
        }
        Tensor::new(vec![g * g, p * p], out)
    }

    /// Runs the vision tower and reads out the class-token feature at `variant`.
    pub fn vision_encode(&self, image: &Tensor, variant: Variant) -> Result<Tensor> {
        let cfg = &self.config;
        let depth = match variant {
            Variant::V0 | Variant::V1 => cfg.vision_layers,
            Variant::V2 => cfg.vision_layers - 1,
        };
        let tokens = self.vision_tokens(image)?;
        let mut x = tokens;
        for b in &self.vision.blocks[..depth] {
            x = b.forward(&x, cfg.vision_heads)?;
        }
        let cls = x.rows(0, 1);
        let normed = self.vision.ln_post.apply(&cls)?;
        let feat = match variant {
            Variant::V0 => ops::matmul(&normed, &self.vision.proj)?,
            Variant::V1 | Variant::V2 => normed,
        };
        feat.reshape(&[cfg.tap_width(variant)])
    }

    /// Patch embeddings with the class token prepended and positions added.
    pub fn vision_tokens(&self, image: &Tensor) -> Result<Tensor> {
        let patches = ops::matmul(&self.patchify(image)?, &self.vision.patch_embed)?;
        let dv = self.config.vision_width;
        let mut rows: Vec<&[f64]> = vec![self.vision.class_token.data()];
        rows.extend((0..patches.shape()[0]).map(|i| patches.row(i)));
        let seq = Tensor::stack_rows(rows, dv)?;
        ops::add(&seq, &self.vision.pos_embed)
    }

    fn check_sequence(&self, seq: &Tensor) -> Result<usize> {
        let (t, w) = seq.dims2()?;
        if w != self.config.text_width {
            return Err(Error::dim(format!(
                "text sequence width {w}, expected {}",
                self.config.text_width
            )));
        }
        if t == 0 || t > self.config.max_seq_len {
            return Err(Error::dim(format!(
                "sequence length {t} outside 1..={}",
                self.config.max_seq_len
            )));
        }
        Ok(t)
    }

    /// Encodes a `T × d_e` embedding sequence to a width-`d` vector read out
    /// at the final (EOS) position.
    pub fn text_encode(&self, seq: &Tensor) -> Result<Tensor> {
        self.text_forward(seq).map(|(e, _)| e)
    }

    fn text_forward(&self, seq: &Tensor) -> Result<(Tensor, TextCache)> {
        let t = self.check_sequence(seq)?;
        let mut x = ops::add(seq, &self.text.pos_embed.rows(0, t))?;
        let mut caches = Vec::with_capacity(self.text.blocks.len());
        for b in &self.text.blocks {
            let (next, cache) = b.forward_cached(&x, self.config.text_heads)?;
            caches.push(cache);
            x = next;
        }
        let last = x.rows(t - 1, t);
        let normed = self.text.ln_final.apply(&last)?;
        let e = ops::matmul(&normed, &self.text.proj)?;
        let e = e.reshape(&[self.config.embed_dim])?;
        Ok((e, TextCache { blocks: caches, last, len: t }))
    }

    /// Returns `(E, ∂⟨g, E⟩/∂seq)` for an upstream gradient `g` on `E`.
    pub fn text_encode_vjp(&self, seq: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
        let (e, cache) = self.text_forward(seq)?;
        if g.len() != e.len() {
            return Err(Error::dim("upstream gradient width differs from embed_dim"));
        }
        let g_row = g.clone().reshape(&[1, self.config.embed_dim])?;
        let d_normed = ops::matmul_nt(&g_row, &self.text.proj)?;
        let d_last = self.text.ln_final.input_grad(&cache.last, &d_normed)?;
        let de = self.config.text_width;
        let mut dx = Tensor::zeros(&[cache.len, de]);
        dx.row_mut(cache.len - 1).copy_from_slice(d_last.data());
        for (b, c) in self.text.blocks.iter().zip(&cache.blocks).rev() {
            dx = b.input_grad(c, self.config.text_heads, &dx)?;
        }
        // Positional add passes the gradient through unchanged.
        Ok((e, dx))
    }

    /// Rows of the token table for `ids`.
    pub fn embed_tokens(&self, ids: &[usize]) -> Result<Tensor> {
        let v = self.config.vocab_size;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::UnknownToken(format!("id {bad} (vocab_size {v})")));
        }
        Tensor::stack_rows(
            ids.iter().map(|&i| self.text.token_embed.row(i)),
            self.config.text_width,
        )
    }
}

struct TextCache {
    blocks: Vec<block::BlockCache>,
    last: Tensor,
    len: usize,
}
