//! Forward operators on the trainable path and their vector-Jacobian products.
//!
//! Every forward op returns a finite tensor or an error. Each `*_vjp` takes the
//! forward inputs plus the upstream gradient and returns the gradient with
//! respect to each input, recomputing whatever forward intermediates it needs.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner extents differ: {m}x{k} · {k2}x{n}"
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)?.check_finite("matmul")
}

/// `a·bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_nt inner extents differ: {m}x{k} · ({n}x{k2})ᵀ"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = a.row(i);
        for j in 0..n {
            out[i * n + j] = dot(ar, b.row(j));
        }
    }
    Tensor::new(vec![m, n], out)?.check_finite("matmul_nt")
}

/// `aᵀ·b` without materializing the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_tn inner extents differ: ({k}x{m})ᵀ · {k2}x{n}"
        )));
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let ar = a.row(p);
        let br = b.row(p);
        for (i, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)?.check_finite("matmul_tn")
}

pub fn matmul_vjp(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((matmul_nt(g, b)?, matmul_tn(a, g)?))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Elementwise sum. `b` may also be a vector matching the last extent of `a`,
/// in which case it is broadcast over the leading axes (bias add).
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() == b.shape() {
        return a.zip_map(b, |x, y| x + y)?.check_finite("add");
    }
    let width = broadcast_width(a, b)?;
    let mut out = a.clone();
    for chunk in out.data_mut().chunks_mut(width) {
        for (o, &bv) in chunk.iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    out.check_finite("add")
}

fn broadcast_width(a: &Tensor, b: &Tensor) -> Result<usize> {
    match (a.shape().last(), b.shape()) {
        (Some(&w), [bw]) if w == *bw && w > 0 => Ok(w),
        _ => Err(Error::dim(format!(
            "add: cannot combine {:?} with {:?}",
            a.shape(),
            b.shape()
        ))),
    }
}

pub fn add_vjp(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    g.expect_same_shape(a)?;
    if a.shape() == b.shape() {
        return Ok((g.clone(), g.clone()));
    }
    let width = broadcast_width(a, b)?;
    Ok((g.clone(), column_sums(g.data(), width)))
}

pub(crate) fn column_sums(data: &[f64], width: usize) -> Tensor {
    let mut s = vec![0.0; width];
    for chunk in data.chunks(width) {
        for (acc, &v) in s.iter_mut().zip(chunk) {
            *acc += v;
        }
    }
    Tensor::vector(s)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Subgradient at exactly zero is zero.
pub fn relu_vjp(x: &Tensor, g: &Tensor) -> Result<Tensor> {
    x.zip_map(g, |xv, gv| if xv > 0.0 { gv } else { 0.0 })
}

fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let n = shape[axis];
    if n == 0 {
        return Err(Error::dim("softmax over an empty axis"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, n, inner))
}

/// Numerically stable softmax along `axis` (max-subtracted).
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = axis_layout(x.shape(), axis)?;
    let mut out = x.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let m = (0..n).map(|k| d[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in 0..n {
                let e = (d[idx(k)] - m).exp();
                d[idx(k)] = e;
                z += e;
            }
            for k in 0..n {
                d[idx(k)] /= z;
            }
        }
    }
    out.check_finite("softmax")
}

pub fn softmax_vjp(x: &Tensor, axis: usize, g: &Tensor) -> Result<Tensor> {
    g.expect_same_shape(x)?;
    let y = softmax(x, axis)?;
    Ok(softmax_vjp_from_output(&y, axis, g))
}

pub(crate) fn softmax_vjp_from_output(y: &Tensor, axis: usize, g: &Tensor) -> Tensor {
    let shape = y.shape();
    let n = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![0.0; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let s: f64 = (0..n).map(|k| yd[idx(k)] * gd[idx(k)]).sum();
            for k in 0..n {
                out[idx(k)] = yd[idx(k)] * (gd[idx(k)] - s);
            }
        }
    }
    Tensor::new(shape.to_vec(), out).expect("shape preserved")
}

fn check_norm_params(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<usize> {
    let w = *x
        .shape()
        .last()
        .ok_or_else(|| Error::dim("layer_norm on a scalar"))?;
    if gamma.shape() != [w] || beta.shape() != [w] || w == 0 {
        return Err(Error::dim(format!(
            "layer_norm: gamma {:?} / beta {:?} do not match width {w}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(w)
}

/// Per-row statistics: (normalized row, 1/sqrt(var + eps)).
fn normalize_rows(x: &Tensor, w: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(x.len() / w);
    for row in x.data().chunks(w) {
        let mean = row.iter().sum::<f64>() / w as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
        let r = 1.0 / (var + eps).sqrt();
        inv_std.push(r);
        xhat.extend(row.iter().map(|v| (v - mean) * r));
    }
    (xhat, inv_std)
}

/// Normalizes over the last axis (population variance, `eps` inside the root).
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let w = check_norm_params(x, gamma, beta)?;
    let (mut xhat, _) = normalize_rows(x, w, eps);
    for row in xhat.chunks_mut(w) {
        for ((v, g), b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = *v * g + b;
        }
    }
    Tensor::new(x.shape().to_vec(), xhat)?.check_finite("layer_norm")
}

/// Returns (dx, dgamma, dbeta).
pub fn layer_norm_vjp(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
    g: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let w = check_norm_params(x, gamma, beta)?;
    g.expect_same_shape(x)?;
    let (xhat, inv_std) = normalize_rows(x, w, eps);
    let mut dx = vec![0.0; x.len()];
    let mut dgamma = vec![0.0; w];
    let mut dbeta = vec![0.0; w];
    for (r, ((xr, gr), dxr)) in xhat
        .chunks(w)
        .zip(g.data().chunks(w))
        .zip(dx.chunks_mut(w))
        .enumerate()
    {
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for k in 0..w {
            let dxhat = gr[k] * gamma.data()[k];
            dgamma[k] += gr[k] * xr[k];
            dbeta[k] += gr[k];
            mean_d += dxhat;
            mean_dx += dxhat * xr[k];
        }
        mean_d /= w as f64;
        mean_dx /= w as f64;
        for k in 0..w {
            let dxhat = gr[k] * gamma.data()[k];
            dxr[k] = inv_std[r] * (dxhat - mean_d - xr[k] * mean_dx);
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::vector(dgamma),
        Tensor::vector(dbeta),
    ))
}

/// Projection weights of one multi-head self-attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

impl AttentionParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            wq: Tensor::zeros(&[d, d]),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::zeros(&[d, d]),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::zeros(&[d, d]),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::zeros(&[d, d]),
            bo: Tensor::zeros(&[d]),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
        ]
    }

    pub fn from_tensors(t: [Tensor; 8]) -> Self {
        let [wq, bq, wk, bk, wv, bv, wo, bo] = t;
        Self {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn width(&self) -> usize {
        self.wq.shape()[0]
    }
}

struct AttentionCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Per-head `T×T` attention weights.
    weights: Vec<Tensor>,
    concat: Tensor,
}

fn check_attention(x: &Tensor, p: &AttentionParams, heads: usize) -> Result<(usize, usize)> {
    let (t, d) = x.dims2()?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::dim(format!(
            "width {d} is not divisible by {heads} heads"
        )));
    }
    for (w, b) in [(&p.wq, &p.bq), (&p.wk, &p.bk), (&p.wv, &p.bv), (&p.wo, &p.bo)] {
        if w.shape() != [d, d] || b.shape() != [d] {
            return Err(Error::dim(format!(
                "attention params {:?}/{:?} do not match width {d}",
                w.shape(),
                b.shape()
            )));
        }
    }
    Ok((t, d / heads))
}

fn attention_forward(x: &Tensor, p: &AttentionParams, heads: usize) -> Result<(Tensor, AttentionCache)> {
    let (t, dh) = check_attention(x, p, heads)?;
    let d = p.width();
    let q = add(&matmul(x, &p.wq)?, &p.bq)?;
    let k = add(&matmul(x, &p.wk)?, &p.bk)?;
    let v = add(&matmul(x, &p.wv)?, &p.bv)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = vec![0.0; t * d];
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut scores = vec![0.0; t * t];
        for i in 0..t {
            for j in 0..t {
                scores[i * t + j] = dot(&q.row(i)[cols.clone()], &k.row(j)[cols.clone()]) * scale;
            }
        }
        let a = softmax(&Tensor::new(vec![t, t], scores)?, 1)?;
        for i in 0..t {
            for j in 0..t {
                let aij = a.at2(i, j);
                let vr = &v.row(j)[cols.clone()];
                for (c, &vv) in vr.iter().enumerate() {
                    concat[i * d + h * dh + c] += aij * vv;
                }
            }
        }
        weights.push(a);
    }
    let concat = Tensor::new(vec![t, d], concat)?;
    let out = add(&matmul(&concat, &p.wo)?, &p.bo)?;
    Ok((
        out,
        AttentionCache {
            q,
            k,
            v,
            weights,
            concat,
        },
    ))
}

/// Bidirectional scaled dot-product self-attention over a `T×d` sequence.
pub fn multi_head_attention(x: &Tensor, p: &AttentionParams, heads: usize) -> Result<Tensor> {
    attention_forward(x, p, heads).map(|(out, _)| out)
}

/// Returns the input gradient and a gradient for every projection weight.
pub fn multi_head_attention_vjp(
    x: &Tensor,
    p: &AttentionParams,
    heads: usize,
    g: &Tensor,
) -> Result<(Tensor, AttentionParams)> {
    let (out, cache) = attention_forward(x, p, heads)?;
    g.expect_same_shape(&out)?;
    let (t, dh) = check_attention(x, p, heads)?;
    let d = p.width();
    let scale = 1.0 / (dh as f64).sqrt();

    let (dconcat, dwo) = matmul_vjp(&cache.concat, &p.wo, g)?;
    let dbo = column_sums(g.data(), d);

    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    for (h, a) in cache.weights.iter().enumerate() {
        let off = h * dh;
        let mut da = vec![0.0; t * t];
        for i in 0..t {
            let go = &dconcat.row(i)[off..off + dh];
            for j in 0..t {
                da[i * t + j] = dot(go, &cache.v.row(j)[off..off + dh]);
                let aij = a.at2(i, j);
                for c in 0..dh {
                    dv[j * d + off + c] += aij * go[c];
                }
            }
        }
        let ds = softmax_vjp_from_output(a, 1, &Tensor::new(vec![t, t], da)?);
        for i in 0..t {
            for j in 0..t {
                let s = ds.at2(i, j) * scale;
                if s == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    dq[i * d + off + c] += s * cache.k.at2(j, off + c);
                    dk[j * d + off + c] += s * cache.q.at2(i, off + c);
                }
            }
        }
    }
    let dq = Tensor::new(vec![t, d], dq)?;
    let dk = Tensor::new(vec![t, d], dk)?;
    let dv = Tensor::new(vec![t, d], dv)?;

    let mut dx = matmul_nt(&dq, &p.wq)?;
    dx.add_assign(&matmul_nt(&dk, &p.wk)?)?;
    dx.add_assign(&matmul_nt(&dv, &p.wv)?)?;
    let grads = AttentionParams {
        wq: matmul_tn(x, &dq)?,
        bq: column_sums(dq.data(), d),
        wk: matmul_tn(x, &dk)?,
        bk: column_sums(dk.data(), d),
        wv: matmul_tn(x, &dv)?,
        bv: column_sums(dv.data(), d),
        wo: dwo,
        bo: dbo,
    };
    Ok((dx, grads))
}

fn row_norms(m: &Tensor, what: &str) -> Result<Vec<f64>> {
    let (r, _) = m.dims2()?;
    (0..r)
        .map(|i| {
            let n = dot(m.row(i), m.row(i)).sqrt();
            if n > 0.0 && n.is_finite() {
                Ok(n)
            } else {
                Err(Error::Degenerate(format!("{what} row {i} has zero norm")))
            }
        })
        .collect()
}

/// Pairwise cosine similarity: `S[b][c] = cos(y_b, e_c)` for `y: B×d`, `e: C×d`.
pub fn cosine_similarity(y: &Tensor, e: &Tensor) -> Result<Tensor> {
    let (b, d) = y.dims2()?;
    let (c, d2) = e.dims2()?;
    if d != d2 {
        return Err(Error::dim(format!(
            "cosine_similarity widths differ: {d} vs {d2}"
        )));
    }
    let ny = row_norms(y, "feature")?;
    let ne = row_norms(e, "class embedding")?;
    let mut s = vec![0.0; b * c];
    for i in 0..b {
        for j in 0..c {
            s[i * c + j] = dot(y.row(i), e.row(j)) / (ny[i] * ne[j]);
        }
    }
    Tensor::new(vec![b, c], s)?.check_finite("cosine_similarity")
}

pub fn cosine_similarity_vjp(y: &Tensor, e: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = cosine_similarity(y, e)?;
    g.expect_same_shape(&s)?;
    let (b, d) = y.dims2()?;
    let (c, _) = e.dims2()?;
    let ny = row_norms(y, "feature")?;
    let ne = row_norms(e, "class embedding")?;
    let mut dy = vec![0.0; b * d];
    let mut de = vec![0.0; c * d];
    for i in 0..b {
        for j in 0..c {
            let gij = g.at2(i, j);
            if gij == 0.0 {
                continue;
            }
            let sij = s.at2(i, j);
            let (yr, er) = (y.row(i), e.row(j));
            for k in 0..d {
                // ∂cos/∂y = e/(|y||e|) − cos·y/|y|²
                dy[i * d + k] += gij * (er[k] / (ny[i] * ne[j]) - sij * yr[k] / (ny[i] * ny[i]));
                de[j * d + k] += gij * (yr[k] / (ny[i] * ne[j]) - sij * er[k] / (ne[j] * ne[j]));
            }
        }
    }
    Ok((Tensor::new(vec![b, d], dy)?, Tensor::new(vec![c, d], de)?))
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (b, c) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::dim(format!(
            "{} labels for {b} rows of logits",
            labels.len()
        )));
    }
    if b == 0 {
        return Err(Error::dim("cross_entropy over an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::dim(format!("label {bad} out of range for {c} classes")));
    }
    Ok((b, c))
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, _) = check_labels(logits, labels)?;
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[l];
    }
    let loss = total / b as f64;
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite("cross_entropy".into()))
    }
}

pub fn cross_entropy_vjp(logits: &Tensor, labels: &[usize], g: f64) -> Result<Tensor> {
    let (b, _) = check_labels(logits, labels)?;
    let mut p = softmax(logits, 1)?;
    let (_, c) = p.dims2()?;
    let scale = g / b as f64;
    for (i, &l) in labels.iter().enumerate() {
        let row = &mut p.data_mut()[i * c..(i + 1) * c];
        row[l] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok(p)
}

/// Names of the operators that have a vector-Jacobian product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Matmul,
    Relu,
    Softmax,
    LayerNorm,
    MultiHeadAttention,
    Add,
    CosineSimilarity,
    CrossEntropy,
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "matmul" => OpKind::Matmul,
            "relu" => OpKind::Relu,
            "softmax" => OpKind::Softmax,
            "layer_norm" => OpKind::LayerNorm,
            "multi_head_attention" => OpKind::MultiHeadAttention,
            "add" => OpKind::Add,
            "cosine_similarity" => OpKind::CosineSimilarity,
            "cross_entropy" => OpKind::CrossEntropy,
            other => return Err(Error::UnknownOp(other.to_string())),
        })
    }
}

/// An operator together with its non-tensor arguments.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Matmul,
    Relu,
    Softmax { axis: usize },
    LayerNorm { eps: f64 },
    MultiHeadAttention { heads: usize },
    Add,
    CosineSimilarity,
    CrossEntropy { labels: Vec<usize> },
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Matmul => OpKind::Matmul,
            Op::Relu => OpKind::Relu,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::MultiHeadAttention { .. } => OpKind::MultiHeadAttention,
            Op::Add => OpKind::Add,
            Op::CosineSimilarity => OpKind::CosineSimilarity,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Relu | Op::Softmax { .. } | Op::CrossEntropy { .. } => 1,
            Op::Matmul | Op::Add | Op::CosineSimilarity => 2,
            Op::LayerNorm { .. } => 3,
            Op::MultiHeadAttention { .. } => 9,
        }
    }

    /// Forward evaluation over the same input list `vjp` takes.
    /// Cross-entropy yields a rank-0 tensor.
    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.check_arity(inputs)?;
        match self {
            Op::Matmul => matmul(inputs[0], inputs[1]),
            Op::Relu => Ok(relu(inputs[0])),
            Op::Softmax { axis } => softmax(inputs[0], *axis),
            Op::LayerNorm { eps } => layer_norm(inputs[0], inputs[1], inputs[2], *eps),
            Op::MultiHeadAttention { heads } => {
                multi_head_attention(inputs[0], &attention_params(&inputs[1..]), *heads)
            }
            Op::Add => add(inputs[0], inputs[1]),
            Op::CosineSimilarity => cosine_similarity(inputs[0], inputs[1]),
            Op::CrossEntropy { labels } => cross_entropy(inputs[0], labels).map(Tensor::scalar),
        }
    }

    fn check_arity(&self, inputs: &[&Tensor]) -> Result<()> {
        if inputs.len() != self.arity() {
            return Err(Error::dim(format!(
                "{:?} takes {} inputs, got {}",
                self.kind(),
                self.arity(),
                inputs.len()
            )));
        }
        Ok(())
    }
}

fn attention_params(t: &[&Tensor]) -> AttentionParams {
    AttentionParams::from_tensors(std::array::from_fn(|i| t[i].clone()))
}

/// Vector-Jacobian product of `op` at `inputs`, one gradient per input.
///
/// Attention inputs are `[x, wq, bq, wk, bk, wv, bv, wo, bo]`; layer norm
/// inputs are `[x, gamma, beta]`; cross-entropy takes a rank-0 upstream.
pub fn vjp(op: &Op, inputs: &[&Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
    op.check_arity(inputs)?;
    Ok(match op {
        Op::Matmul => {
            let (da, db) = matmul_vjp(inputs[0], inputs[1], upstream)?;
            vec![da, db]
        }
        Op::Relu => vec![relu_vjp(inputs[0], upstream)?],
        Op::Softmax { axis } => vec![softmax_vjp(inputs[0], *axis, upstream)?],
        Op::LayerNorm { eps } => {
            let (dx, dg, db) = layer_norm_vjp(inputs[0], inputs[1], inputs[2], *eps, upstream)?;
            vec![dx, dg, db]
        }
        Op::MultiHeadAttention { heads } => {
            let p = attention_params(&inputs[1..]);
            let (dx, dp) = multi_head_attention_vjp(inputs[0], &p, *heads, upstream)?;
            let mut out = vec![dx];
            out.extend(dp.tensors().into_iter().cloned());
            out
        }
        Op::Add => {
            let (da, db) = add_vjp(inputs[0], inputs[1], upstream)?;
            vec![da, db]
        }
        Op::CosineSimilarity => {
            let (dy, de) = cosine_similarity_vjp(inputs[0], inputs[1], upstream)?;
            vec![dy, de]
        }
        Op::CrossEntropy { labels } => {
            if upstream.len() != 1 {
                return Err(Error::dim("cross_entropy upstream must be a scalar"));
            }
            vec![cross_entropy_vjp(inputs[0], labels, upstream.data()[0])?]
        }
    })
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_difference_grad<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i} during finite differencing"
            )));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_annihilator() {
        let b = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(matmul(&Tensor::identity(3), &b).unwrap(), b);
        let z = matmul(&Tensor::zeros(&[2, 3]), &Tensor::ones(&[3, 2])).unwrap();
        assert_eq!(z, Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_hand_case() {
        let c = matmul(&m(&[&[1.0, 2.0], &[3.0, 4.0]]), &m(&[&[5.0], &[6.0]])).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let r = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3]));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&x.map(|v| -v.abs() - 1.0)), Tensor::zeros(&[3]));
        assert_eq!(relu(&relu(&x)), relu(&x));
    }

    #[test]
    fn softmax_cases() {
        let s = softmax(&Tensor::vector(vec![0.0, 0.0]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::vector(vec![1.0, -1.0]), 0).unwrap();
        assert!((s.data()[0] - 0.880797).abs() < 1e-6);
        assert!((s.data()[1] - 0.119203).abs() < 1e-6);
        let a = softmax(&Tensor::vector(vec![3.0, 3.7]), 0).unwrap();
        let b = softmax(&Tensor::vector(vec![-40.0, -39.3]), 0).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-9);
        assert!(softmax(&Tensor::zeros(&[2, 0]), 1).is_err());
        assert!(softmax(&Tensor::zeros(&[2, 2]), 2).is_err());
    }

    #[test]
    fn softmax_inner_axis() {
        let x = m(&[&[1.0, 5.0], &[1.0, 5.0]]);
        let s = softmax(&x, 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn layer_norm_cases() {
        let ones = Tensor::ones(&[2]);
        let zeros = Tensor::zeros(&[2]);
        let c = layer_norm(&m(&[&[4.0, 4.0]]), &ones, &zeros, LAYER_NORM_EPS).unwrap();
        assert_eq!(c.data(), &[0.0, 0.0]);
        let beta = Tensor::vector(vec![0.3, -0.7]);
        let c = layer_norm(&m(&[&[1.0, 9.0], &[2.0, 5.0]]), &zeros, &beta, LAYER_NORM_EPS).unwrap();
        assert_eq!(c.data(), &[0.3, -0.7, 0.3, -0.7]);
        let c = layer_norm(&m(&[&[1.0, 3.0]]), &ones, &zeros, 1e-15).unwrap();
        assert!((c.data()[0] + 1.0).abs() < 1e-9 && (c.data()[1] - 1.0).abs() < 1e-9);
        assert!(layer_norm(&m(&[&[1.0, 3.0]]), &Tensor::ones(&[3]), &zeros, 1e-5).is_err());
    }

    #[test]
    fn attention_single_token_returns_value_projection() {
        let x = m(&[&[0.5, -1.0, 2.0, 0.25]]);
        let mut p = AttentionParams::zeros(4);
        for (i, v) in p.wv.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        p.bv = Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]);
        p.wo = Tensor::identity(4);
        p.wq = Tensor::full(&[4, 4], 0.3);
        let out = multi_head_attention(&x, &p, 2).unwrap();
        let expected = add(&matmul(&x, &p.wv).unwrap(), &p.bv).unwrap();
        assert!(out.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn attention_zero_input_zero_bias() {
        let mut p = AttentionParams::zeros(4);
        p.wq = Tensor::full(&[4, 4], 0.5);
        p.wv = Tensor::identity(4);
        p.wo = Tensor::identity(4);
        let out = multi_head_attention(&Tensor::zeros(&[3, 4]), &p, 2).unwrap();
        assert_eq!(out, Tensor::zeros(&[3, 4]));
        assert!(multi_head_attention(&Tensor::zeros(&[3, 4]), &p, 3).is_err());
    }

    #[test]
    fn attention_two_tokens_by_hand() {
        // One head, d = 2. Q = x·Wq, K = x·Wk, V = x·Wv, all biases zero, Wo = I.
        let x = m(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let mut p = AttentionParams::zeros(2);
        p.wq = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        p.wk = m(&[&[0.5, 0.0], &[0.0, 1.0]]);
        p.wv = m(&[&[2.0, 1.0], &[0.0, 1.0]]);
        p.wo = Tensor::identity(2);
        // Q = [[1,0],[0,2]], K = [[0.5,0],[0,2]], V = [[2,1],[0,2]]
        let s = 1.0 / 2f64.sqrt();
        let row = |a: f64, b: f64| {
            let (ea, eb) = (a.exp(), b.exp());
            (ea / (ea + eb), eb / (ea + eb))
        };
        let (a00, a01) = row(0.5 * s, 0.0);
        let (a10, a11) = row(0.0, 4.0 * s);
        let expected = m(&[
            &[a00 * 2.0 + a01 * 0.0, a00 * 1.0 + a01 * 2.0],
            &[a10 * 2.0 + a11 * 0.0, a10 * 1.0 + a11 * 2.0],
        ]);
        let out = multi_head_attention(&x, &p, 1).unwrap();
        assert!(out.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn add_vjp_is_linear() {
        let a = Tensor::ones(&[2, 3]);
        let g = Tensor::full(&[2, 3], 0.7);
        let grads = vjp(&Op::Add, &[&a, &a], &g).unwrap();
        assert_eq!(grads, vec![g.clone(), g.clone()]);
        let (_, db) = add_vjp(&a, &Tensor::zeros(&[3]), &g).unwrap();
        assert!((db.data()[0] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn relu_vjp_negative_region_is_zero() {
        let x = Tensor::full(&[4], -0.5);
        let g = vjp(&Op::Relu, &[&x], &Tensor::ones(&[4])).unwrap();
        assert_eq!(g[0], Tensor::zeros(&[4]));
        let at_zero = relu_vjp(&Tensor::zeros(&[1]), &Tensor::ones(&[1])).unwrap();
        assert_eq!(at_zero.data(), &[0.0]);
    }

    #[test]
    fn unknown_op_name() {
        assert!(matches!("conv2d".parse::<OpKind>(), Err(Error::UnknownOp(_))));
        assert_eq!("layer_norm".parse::<OpKind>().unwrap(), OpKind::LayerNorm);
    }

    #[test]
    fn vjp_checks_arity() {
        let x = Tensor::ones(&[2, 2]);
        assert!(vjp(&Op::Matmul, &[&x], &x).is_err());
    }

    #[test]
    fn cosine_zero_norm_is_degenerate() {
        let y = Tensor::zeros(&[1, 3]);
        let e = Tensor::ones(&[2, 3]);
        assert!(matches!(cosine_similarity(&y, &e), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cross_entropy_uniform_two_class() {
        let l = cross_entropy(&Tensor::zeros(&[3, 2]), &[0, 1, 1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(cross_entropy(&Tensor::zeros(&[1, 2]), &[2]).is_err());
    }

    #[test]
    fn finite_difference_basics() {
        let x = Tensor::vector(vec![0.3, -1.2, 4.0]);
        let g = finite_difference_grad(|t| Ok(t.sum()), &x, 1e-6).unwrap();
        assert!(g.max_abs_diff(&Tensor::ones(&[3])) < 1e-8);
        let g = finite_difference_grad(|_| Ok(0.0), &x, 1e-6).unwrap();
        assert_eq!(g, Tensor::zeros(&[3]));
        let g = finite_difference_grad(|t| Ok(t.data()[0].powi(2)), &Tensor::vector(vec![3.0]), 1e-6)
            .unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
        assert!(finite_difference_grad(|_| Ok(f64::NAN), &x, 1e-6).is_err());
        assert!(finite_difference_grad(|t| Ok(t.sum()), &x, 0.0).is_err());
    }
}
