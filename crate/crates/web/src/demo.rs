use adaptprompt::adaptation::head::{self, HeadParams, MAX_LOGIT_SCALE};
use adaptprompt::analysis::{dataset_mean_spectrum, detect_spikes, gaussian_blur, jpeg_like, RadialSpectrum};
use adaptprompt::data::synth::{render, GeneratorKind};
use adaptprompt::rng::Prng;
use adaptprompt::{Error, Result, Tensor};

pub const BASE_SIGMA: f64 = 1.5;
pub const MAX_SIDE: usize = 256;
pub const MAX_COUNT: usize = 512;

fn kind(name: &str, f0: f64, strength: f64) -> Result<Option<GeneratorKind>> {
    match name {
        "real" => Ok(None),
        "periodic" => Ok(Some(GeneratorKind::Periodic { f0, amplitude: strength })),
        "broadband" => Ok(Some(GeneratorKind::Broadband { std: strength })),
        other => Err(Error::InvalidConfig(format!("unknown image kind `{other}`"))),
    }
}

fn check_side(side: usize) -> Result<()> {
    if side < 8 || side > MAX_SIDE {
        return Err(Error::InvalidConfig(format!("side must be in 8..={MAX_SIDE}, got {side}")));
    }
    Ok(())
}

fn images(name: &str, side: usize, f0: f64, strength: f64, count: usize, seed: u64) -> Result<Vec<Tensor>> {
    check_side(side)?;
    let k = kind(name, f0, strength)?;
    (0..count as u64)
        .map(|i| {
            let mut rng = Prng::derive(seed, &[i]);
            render(side, BASE_SIGMA, k.as_ref(), &mut rng).map(|(_, img)| img)
        })
        .collect()
}

pub fn render_image(name: &str, side: usize, f0: f64, strength: f64, seed: u64) -> Result<Vec<f64>> {
    let mut v = images(name, side, f0, strength, 1, seed)?;
    Ok(v.pop().expect("one image").into_data())
}

pub fn mean_spectrum(name: &str, side: usize, f0: f64, strength: f64, count: usize, seed: u64) -> Result<RadialSpectrum> {
    if count == 0 || count > MAX_COUNT {
        return Err(Error::InvalidConfig(format!("count must be in 1..={MAX_COUNT}, got {count}")));
    }
    dataset_mean_spectrum(&images(name, side, f0, strength, count, seed)?)
}

pub fn spikes(s: &RadialSpectrum) -> Vec<u32> {
    detect_spikes(s).into_iter().map(|b| b as u32).collect()
}

/// Floors at 1e-12 so empty bins stay plottable.
pub fn log10(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.max(1e-12).log10()).collect()
}

pub fn perturb(pixels: &[f64], side: usize, name: &str, param: f64) -> Result<Vec<f64>> {
    check_side(side)?;
    let img = Tensor::new(vec![side, side], pixels.to_vec())?;
    let out = match name {
        "blur" => gaussian_blur(&img, param)?,
        "jpeg" => {
            if param.fract() != 0.0 || !(1.0..=100.0).contains(&param) {
                return Err(Error::InvalidConfig(format!("jpeg quality must be an integer in 1..=100, got {param}")));
            }
            jpeg_like(&img, param as u32)?
        }
        other => return Err(Error::InvalidConfig(format!("unknown perturbation `{other}`"))),
    };
    Ok(out.into_data())
}

fn unit(deg: f64) -> Vec<f64> {
    let r = deg.to_radians();
    vec![r.cos(), r.sin()]
}

/// `tau` below `1 / MAX_LOGIT_SCALE` is clamped like a trained head.
pub fn class_probabilities(feature_deg: f64, class_deg: &[f64], tau: f64) -> Result<Vec<f64>> {
    if class_deg.is_empty() {
        return Err(Error::InvalidConfig("no classes".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {tau}")));
    }
    let y = Tensor::from_rows(&[unit(feature_deg)])?;
    let e = Tensor::from_rows(&class_deg.iter().map(|&d| unit(d)).collect::<Vec<_>>())?;
    let mut h = HeadParams { log_inv_tau: -tau.ln(), w_out: None };
    h.clamp();
    debug_assert!(h.logit_scale() <= MAX_LOGIT_SCALE * (1.0 + 1e-12));
    Ok(head::class_probabilities(&y, &e, &h)?.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_seeded_and_in_range() {
        let a = render_image("broadband", 32, 0.0, 0.12, 5).unwrap();
        assert_eq!(a, render_image("broadband", 32, 0.0, 0.12, 5).unwrap());
        assert_ne!(a, render_image("broadband", 32, 0.0, 0.12, 6).unwrap());
        assert_eq!(a.len(), 32 * 32);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(render_image("gan", 32, 0.0, 0.1, 0).is_err());
        assert!(render_image("real", 4, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn periodic_set_spikes_near_its_frequency() {
        let s = mean_spectrum("periodic", 32, 6.0, 0.3, 40, 1).unwrap();
        let found = spikes(&s);
        let target = (6.0 * 2f64.sqrt()).floor() as u32;
        assert!(found.iter().any(|&b| b.abs_diff(target) <= 1), "{found:?}");
        assert!(spikes(&mean_spectrum("real", 32, 0.0, 0.0, 40, 1).unwrap()).is_empty());
    }

    #[test]
    fn log_spectrum_floors() {
        assert_eq!(log10(&[100.0, 0.0]), vec![2.0, -12.0]);
    }

    #[test]
    fn perturbations() {
        let img = render_image("real", 16, 0.0, 0.0, 2).unwrap();
        assert_eq!(perturb(&img, 16, "blur", 0.0).unwrap(), img);
        let j = perturb(&img, 16, "jpeg", 30.0).unwrap();
        assert_eq!(j.len(), img.len());
        assert!(perturb(&img, 16, "jpeg", 30.5).is_err());
        assert!(perturb(&img, 16, "sharpen", 1.0).is_err());
        assert!(perturb(&img[1..], 16, "blur", 1.0).is_err());
    }

    #[test]
    fn probabilities_follow_softmax_of_scaled_cosines() {
        let (f, classes, tau) = (30.0, [0.0, 90.0, 200.0], 0.5);
        let p = class_probabilities(f, &classes, tau).unwrap();
        let z: Vec<f64> = classes.iter().map(|c: &f64| (f - c).to_radians().cos() / tau).collect();
        let norm: f64 = z.iter().map(|v| v.exp()).sum();
        for (pi, zi) in p.iter().zip(&z) {
            assert!((pi - zi.exp() / norm).abs() < 1e-12);
        }
        let sharp = class_probabilities(f, &classes, 1e-6).unwrap();
        let capped = class_probabilities(f, &classes, 1.0 / MAX_LOGIT_SCALE).unwrap();
        assert!(sharp.iter().zip(&capped).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(class_probabilities(f, &[], 1.0).is_err());
        assert!(class_probabilities(f, &classes, 0.0).is_err());
    }
}
