use std::f64::consts::PI;
use std::sync::OnceLock;

use super::blur::reflect;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard luminance quantization table, row-major.
pub const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quality-scaled table: `clamp(⌊(Q·scale + 50)/100⌋, 1, 255)`.
pub fn quant_table(quality: u32) -> Result<[f64; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidConfig(format!("jpeg quality {quality} outside 1..=100")));
    }
    let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    let mut q = [0.0; 64];
    for (o, &base) in q.iter_mut().zip(&LUMA_TABLE) {
        *o = ((base as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    Ok(q)
}

/// Orthonormal DCT-II basis: `C[k][n]`.
fn dct_matrix() -> &'static [[f64; 8]; 8] {
    static M: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (k, row) in m.iter_mut().enumerate() {
            let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = a * (PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
            }
        }
        m
    })
}

/// `C · B · Cᵀ` (forward) or `Cᵀ · B · C` (inverse).
fn transform(block: &[f64; 64], inverse: bool) -> [f64; 64] {
    let c = dct_matrix();
    let at = |i: usize, j: usize| if inverse { c[j][i] } else { c[i][j] };
    let mut tmp = [0.0; 64];
    for i in 0..8 {
        for j in 0..8 {
            tmp[i * 8 + j] = (0..8).map(|k| at(i, k) * block[k * 8 + j]).sum();
        }
    }
    let mut out = [0.0; 64];
    for i in 0..8 {
        for j in 0..8 {
            out[i * 8 + j] = (0..8).map(|k| tmp[i * 8 + k] * at(j, k)).sum();
        }
    }
    out
}

pub fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    transform(block, false)
}

pub fn idct8x8(coeffs: &[f64; 64]) -> [f64; 64] {
    transform(coeffs, true)
}

/// Quantize/dequantize one level-shifted block in the 0..255 domain.
fn round_trip_block(block: &[f64; 64], q: &[f64; 64]) -> [f64; 64] {
    let mut coeffs = dct8x8(block);
    for (c, qv) in coeffs.iter_mut().zip(q) {
        *c = (*c / qv).round() * qv;
    }
    idct8x8(&coeffs)
}

/// Blockwise DCT quantization of a `[0, 1]` grayscale image at `quality`.
/// Sides are reflection-padded to a multiple of 8 and cropped back.
pub fn jpeg_like(image: &Tensor, quality: u32) -> Result<Tensor> {
    let q = quant_table(quality)?;
    let (h, w) = image.dims2()?;
    if h == 0 || w == 0 {
        return Err(Error::dim("empty image"));
    }
    let (ph, pw) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
    let src = image.data();
    let mut out = vec![0.0; h * w];
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            let mut block = [0.0; 64];
            for i in 0..8 {
                let y = reflect((by + i) as isize, h);
                for j in 0..8 {
                    let x = reflect((bx + j) as isize, w);
                    block[i * 8 + j] = src[y * w + x] * 255.0 - 128.0;
                }
            }
            let rec = round_trip_block(&block, &q);
            for i in 0..8 {
                for j in 0..8 {
                    let (y, x) = (by + i, bx + j);
                    if y < h && x < w {
                        out[y * w + x] = (rec[i * 8 + j] + 128.0).clamp(0.0, 255.0) / 255.0;
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, w], out)
}
