//! Unnormalized 2-D discrete Fourier transform.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{ComplexGrid, Tensor};

/// `F[u][v] = Σ img[x][y]·exp(−2πi(ux/H + vy/W))`, no normalization.
pub fn fft2(image: &Tensor) -> Result<ComplexGrid> {
    let (h, w) = image.dims2()?;
    if h == 0 || w == 0 {
        return Err(Error::dim("fft2 of an empty image"));
    }
    let mut buf: Vec<Complex64> = image.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();

    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_mut(w) {
        row_fft.process(row);
    }

    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for v in 0..w {
        for (u, c) in col.iter_mut().enumerate() {
            *c = buf[u * w + v];
        }
        col_fft.process(&mut col);
        for (u, c) in col.iter().enumerate() {
            buf[u * w + v] = *c;
        }
    }

    Ok(ComplexGrid {
        height: h,
        width: w,
        re: buf.iter().map(|c| c.re).collect(),
        im: buf.iter().map(|c| c.im).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(img: &Tensor) -> ComplexGrid {
        let (h, w) = img.dims2().unwrap();
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                for x in 0..h {
                    for y in 0..w {
                        let ang = -2.0 * PI * ((u * x) as f64 / h as f64 + (v * y) as f64 / w as f64);
                        re[u * w + v] += img.at2(x, y) * ang.cos();
                        im[u * w + v] += img.at2(x, y) * ang.sin();
                    }
                }
            }
        }
        ComplexGrid { height: h, width: w, re, im }
    }

    #[test]
    fn constant_image_is_dc_only() {
        let c = 0.7;
        let f = fft2(&Tensor::full(&[4, 4], c)).unwrap();
        assert!((f.re[0] - c * 16.0).abs() < 1e-9);
        for k in 1..16 {
            assert!(f.re[k].abs() < 1e-9 && f.im[k].abs() < 1e-9);
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut img = Tensor::zeros(&[5, 3]);
        img.data_mut()[0] = 1.0;
        let f = fft2(&img).unwrap();
        for k in 0..15 {
            assert!((f.re[k] - 1.0).abs() < 1e-12 && f.im[k].abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_summation() {
        let vals: Vec<f64> = (0..16).map(|i| ((i * 7919) % 31) as f64 / 31.0 - 0.4).collect();
        let img = Tensor::new(vec![4, 4], vals).unwrap();
        let (a, b) = (fft2(&img).unwrap(), naive_dft(&img));
        for k in 0..16 {
            assert!((a.re[k] - b.re[k]).abs() < 1e-9);
            assert!((a.im[k] - b.im[k]).abs() < 1e-9);
        }
        let rect = Tensor::new(vec![3, 6], (0..18).map(|i| (i as f64).sin()).collect()).unwrap();
        let (a, b) = (fft2(&rect).unwrap(), naive_dft(&rect));
        for k in 0..18 {
            assert!((a.re[k] - b.re[k]).abs() < 1e-9 && (a.im[k] - b.im[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_image_is_an_error() {
        assert!(fft2(&Tensor::zeros(&[0, 4])).is_err());
    }
}
