use std::fmt::Write;

use crate::error::{Error, Result};
use crate::fft::fft2;
use crate::tensor::Tensor;

/// Fold factor a bin must exceed over its neighborhood to count as a spike.
pub const SPIKE_FACTOR: f64 = 3.0;
/// Non-spike neighbor bins compared against.
pub const SPIKE_NEIGHBORS: usize = 4;

/// Azimuthally averaged power over unit-width annuli `[b, b+1)` of the
/// centered frequency radius.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialSpectrum {
    pub mean_power: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Signed frequency of DFT index `u` for length `n`.
fn centered(u: usize, n: usize) -> f64 {
    if u < n.div_ceil(2) {
        u as f64
    } else {
        u as f64 - n as f64
    }
}

/// Annulus index of every DFT coordinate of an `n × n` grid, row-major.
fn bin_map(n: usize) -> (Vec<usize>, usize) {
    let mut bins = Vec::with_capacity(n * n);
    let mut max = 0;
    for u in 0..n {
        for v in 0..n {
            let r = centered(u, n).hypot(centered(v, n));
            let b = r.floor() as usize;
            max = max.max(b);
            bins.push(b);
        }
    }
    (bins, max + 1)
}

pub fn radial_power_spectrum(image: &Tensor) -> Result<RadialSpectrum> {
    let (h, w) = image.dims2()?;
    if h != w {
        return Err(Error::dim(format!("radial spectrum needs a square image, got {h}x{w}")));
    }
    if h == 0 {
        return Err(Error::dim("empty image"));
    }
    let power = fft2(image)?.power();
    let (bins, nbins) = bin_map(h);
    let mut sum = vec![0.0; nbins];
    let mut counts = vec![0usize; nbins];
    for (p, &b) in power.iter().zip(&bins) {
        sum[b] += p;
        counts[b] += 1;
    }
    let mean_power = sum
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    Ok(RadialSpectrum { mean_power, counts })
}

/// Per-bin mean of the individual spectra.
pub fn dataset_mean_spectrum(images: &[Tensor]) -> Result<RadialSpectrum> {
    let first = images
        .first()
        .ok_or_else(|| Error::Data("mean spectrum of an empty image set".into()))?;
    let shape = first.shape().to_vec();
    let spectra = crate::par::map(images, |img| {
        if img.shape() != shape.as_slice() {
            return Err(Error::dim(format!(
                "image of shape {:?} in a set of {:?}",
                img.shape(),
                shape
            )));
        }
        radial_power_spectrum(img)
    });
    let mut acc: Option<RadialSpectrum> = None;
    for s in spectra {
        let s = s?;
        match &mut acc {
            None => acc = Some(s),
            Some(a) => {
                for (x, y) in a.mean_power.iter_mut().zip(&s.mean_power) {
                    *x += y;
                }
            }
        }
    }
    let mut out = acc.expect("non-empty");
    let n = images.len() as f64;
    for x in &mut out.mean_power {
        *x /= n;
    }
    Ok(out)
}

impl RadialSpectrum {
    pub fn len(&self) -> usize {
        self.mean_power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_power.is_empty()
    }

    /// Σ bin mean × bin count.
    pub fn total_power(&self) -> f64 {
        self.mean_power
            .iter()
            .zip(&self.counts)
            .map(|(m, &c)| m * c as f64)
            .sum()
    }

    /// Mean of the bin means over the last third of the bins.
    pub fn upper_third_mean(&self) -> f64 {
        let k = self.len().div_ceil(3);
        let tail = &self.mean_power[self.len() - k..];
        tail.iter().sum::<f64>() / k as f64
    }

    /// `radius<TAB>mean_power<TAB>count` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (b, (m, c)) in self.mean_power.iter().zip(&self.counts).enumerate() {
            let _ = writeln!(out, "{b}\t{m:.6}\t{c}");
        }
        out
    }
}

/// Bins (never bin 0) whose mean power exceeds `SPIKE_FACTOR` times the mean
/// of their `SPIKE_NEIGHBORS` nearest non-spike bins. The spike set is grown
/// until it no longer changes, so a spike never props up its neighbor's baseline.
pub fn detect_spikes(spectrum: &RadialSpectrum) -> Vec<usize> {
    let n = spectrum.len();
    let usable = |b: usize| b > 0 && spectrum.counts[b] > 0;
    let mut spike = vec![false; n];
    loop {
        let found: Vec<usize> = (1..n)
            .filter(|&b| usable(b) && !spike[b])
            .filter(|&b| {
                let mut cands: Vec<usize> = (1..n).filter(|&o| o != b && usable(o) && !spike[o]).collect();
                cands.sort_by_key(|&o| (o.abs_diff(b), o));
                cands.truncate(SPIKE_NEIGHBORS);
                if cands.is_empty() {
                    return false;
                }
                let base = cands.iter().map(|&o| spectrum.mean_power[o]).sum::<f64>() / cands.len() as f64;
                spectrum.mean_power[b] > SPIKE_FACTOR * base
            })
            .collect();
        if found.is_empty() {
            break;
        }
        for b in found {
            spike[b] = true;
        }
    }
    (0..n).filter(|&b| spike[b]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;
    use std::f64::consts::PI;

    fn random_image(n: usize, seed: u64) -> Tensor {
        let mut r = Prng::new(seed);
        Tensor::new(vec![n, n], (0..n * n).map(|_| r.next_f64()).collect()).unwrap()
    }

    #[test]
    fn constant_image_is_dc_only() {
        let c = 0.3;
        let s = radial_power_spectrum(&Tensor::full(&[4, 4], c)).unwrap();
        assert!((s.mean_power[0] - (c * 16.0).powi(2)).abs() < 1e-9);
        assert!(s.mean_power[1..].iter().all(|&p| p.abs() < 1e-20));
        assert_eq!(s.counts[0], 1);
    }

    #[test]
    fn bins_partition_grid() {
        for n in [4, 5, 8, 32] {
            let (bins, nbins) = bin_map(n);
            assert_eq!(bins.len(), n * n);
            let s = radial_power_spectrum(&random_image(n, 1)).unwrap();
            assert_eq!(s.len(), nbins);
            assert_eq!(s.counts.iter().sum::<usize>(), n * n);
        }
        assert_eq!(bin_map(32).1, 23);
    }

    #[test]
    fn parseval() {
        for n in [6, 8, 16] {
            let img = random_image(n, n as u64);
            let s = radial_power_spectrum(&img).unwrap();
            let energy: f64 = img.data().iter().map(|v| v * v).sum::<f64>() * (n * n) as f64;
            assert!((s.total_power() - energy).abs() <= 1e-9 * energy);
        }
    }

    #[test]
    fn matches_direct_dft_binning() {
        let n = 8;
        let img = random_image(n, 7);
        let s = radial_power_spectrum(&img).unwrap();
        let mut sums = vec![0.0; s.len()];
        for u in 0..n {
            for v in 0..n {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..n {
                    for x in 0..n {
                        let a = -2.0 * PI * ((u * y) as f64 / n as f64 + (v * x) as f64 / n as f64);
                        re += img.at2(y, x) * a.cos();
                        im += img.at2(y, x) * a.sin();
                    }
                }
                let fu = if u >= n / 2 { u as f64 - n as f64 } else { u as f64 };
                let fv = if v >= n / 2 { v as f64 - n as f64 } else { v as f64 };
                sums[(fu * fu + fv * fv).sqrt() as usize] += re * re + im * im;
            }
        }
        for (b, total) in sums.iter().enumerate() {
            assert!((s.mean_power[b] * s.counts[b] as f64 - total).abs() < 1e-9 * total.max(1.0));
        }
    }

    fn tone(n: usize, k: usize, phase: f64) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for y in 0..n {
            for x in 0..n {
                t.data_mut()[y * n + x] = 0.5 + 0.2 * (2.0 * PI * (k * x) as f64 / n as f64 + phase).cos();
            }
        }
        t
    }

    #[test]
    fn single_tone_lands_in_its_bin() {
        let s = radial_power_spectrum(&tone(16, 5, 0.0)).unwrap();
        for (b, p) in s.mean_power.iter().enumerate() {
            if b != 0 && b != 5 {
                assert!(p.abs() < 1e-18, "bin {b}: {p}");
            }
        }
        assert!(s.mean_power[5] > 0.0);
    }

    #[test]
    fn tone_set_has_exactly_one_spike() {
        let imgs: Vec<Tensor> = (0..5).map(|i| tone(16, 5, i as f64)).collect();
        let s = dataset_mean_spectrum(&imgs).unwrap();
        assert_eq!(detect_spikes(&s), vec![5]);
    }

    #[test]
    fn single_image_mean_is_its_spectrum() {
        let img = random_image(8, 3);
        assert_eq!(
            dataset_mean_spectrum(std::slice::from_ref(&img)).unwrap(),
            radial_power_spectrum(&img).unwrap()
        );
        assert!(dataset_mean_spectrum(&[img, random_image(6, 1)]).is_err());
        assert!(dataset_mean_spectrum(&[]).is_err());
    }

    #[test]
    fn white_noise_has_no_spikes() {
        let imgs: Vec<Tensor> = (0..500).map(|i| random_image(32, 100 + i)).collect();
        let s = dataset_mean_spectrum(&imgs).unwrap();
        assert!(detect_spikes(&s).is_empty());
    }

    #[test]
    fn rejects_non_square() {
        assert!(radial_power_spectrum(&Tensor::zeros(&[4, 5])).is_err());
    }
}
