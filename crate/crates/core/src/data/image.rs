//! Binary PGM (P5) / PPM (P6) images with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Decodes a P5/P6 image into an `H×W` grayscale tensor with values in [0, 1].
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let err = |msg: String| Error::Image {
        path: path.to_path_buf(),
        msg,
    };
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header".into()));
        }
        fields.push(&bytes[start..pos]);
    }
    let channels = match fields[0] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(err(format!(
                "unsupported magic `{}` (only P5/P6)",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let num = |b: &[u8], what: &str| -> Result<usize> {
        std::str::from_utf8(b)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(format!("invalid {what}")))
    };
    let width = num(fields[1], "width")?;
    let height = num(fields[2], "height")?;
    let maxval = num(fields[3], "maxval")?;
    if maxval != 255 {
        return Err(err(format!("maxval {maxval} unsupported (expected 255)")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("missing separator after header".into()));
    }
    pos += 1;
    let need = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(err(format!(
            "truncated payload: {} of {need} bytes",
            payload.len()
        )));
    }
    let data = if channels == 1 {
        payload[..need].iter().map(|&v| v as f64 / 255.0).collect()
    } else {
        payload[..need]
            .chunks_exact(3)
            .map(|px| {
                (LUMA[0] * px[0] as f64 + LUMA[1] * px[1] as f64 + LUMA[2] * px[2] as f64) / 255.0
            })
            .collect()
    };
    Tensor::new(vec![height, width], data)
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, path)
}

/// Quantizes [0, 1] values to 8 bits (round half away from zero, clamped).
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = image.dims2()?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn save_pgm(path: &Path, image: &Tensor) -> Result<()> {
    std::fs::write(path, encode_pgm(image)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(bytes: &[u8]) -> Result<Tensor> {
        decode_pnm(bytes, Path::new("mem"))
    }

    #[test]
    fn black_and_white_pgm() {
        let mut b = b"P5\n3 2\n255\n".to_vec();
        b.extend([0u8; 6]);
        assert_eq!(p(&b).unwrap(), Tensor::zeros(&[2, 3]));
        let mut b = b"P5 3 2 255\n".to_vec();
        b.extend([255u8; 6]);
        assert_eq!(p(&b).unwrap(), Tensor::ones(&[2, 3]));
    }

    #[test]
    fn ppm_uses_luma_weights() {
        let mut b = b"P6\n# red pixel\n1 1\n255\n".to_vec();
        b.extend([255u8, 0, 0]);
        assert!((p(&b).unwrap().data()[0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(p(b"P2\n1 1\n255\n0").unwrap_err().to_string().contains("unsupported magic"));
        assert!(p(b"P5\n2 2\n255\n\x01\x02").unwrap_err().to_string().contains("truncated"));
        assert!(p(b"P5\n1 1\n65535\n\x00\x00").unwrap_err().to_string().contains("maxval"));
        assert!(p(b"P5\n1").is_err());
    }

    #[test]
    fn encode_decode() {
        let t = Tensor::new(vec![1, 3], vec![0.0, 0.5, 1.0]).unwrap();
        let back = p(&encode_pgm(&t).unwrap()).unwrap();
        assert_eq!(back.data(), &[0.0, 128.0 / 255.0, 1.0]);
    }
}
