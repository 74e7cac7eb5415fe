//! Seeded synthetic corpus standing in for GAN-style (periodic artifact) and
//! diffusion-style (broadband noise) training data.

use std::f64::consts::PI;
use std::path::Path;

use crate::analysis::blur::gaussian_blur;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

use super::image::encode_pgm;
use super::manifest::{Family, Manifest, Record};

#[derive(Clone, Debug, PartialEq)]
pub enum GeneratorKind {
    /// Adds `amplitude·cos(2π f0 x/N)·cos(2π f0 y/N)`.
    Periodic { f0: f64, amplitude: f64 },
    /// Adds i.i.d. Gaussian noise of standard deviation `std`.
    Broadband { std: f64 },
}

impl GeneratorKind {
    pub fn family(&self) -> Family {
        match self {
            GeneratorKind::Periodic { .. } => Family::Gan,
            GeneratorKind::Broadband { .. } => Family::Diffusion,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoGenerator {
    pub name: String,
    pub kind: GeneratorKind,
}

impl PseudoGenerator {
    pub fn periodic(name: &str, f0: f64, amplitude: f64) -> Self {
        Self {
            name: name.into(),
            kind: GeneratorKind::Periodic { f0, amplitude },
        }
    }

    pub fn broadband(name: &str, std: f64) -> Self {
        Self {
            name: name.into(),
            kind: GeneratorKind::Broadband { std },
        }
    }

    /// `name:periodic:f0:amplitude` or `name:broadband:std`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad number `{v}` in generator `{s}`")))
        };
        match parts.as_slice() {
            [name, "periodic", f0, a] => Ok(Self::periodic(name, num(f0)?, num(a)?)),
            [name, "broadband", std] => Ok(Self::broadband(name, num(std)?)),
            _ => Err(Error::InvalidConfig(format!(
                "generator `{s}` is not name:periodic:f0:a or name:broadband:std"
            ))),
        }
    }

    pub fn describe(&self) -> String {
        match self.kind {
            GeneratorKind::Periodic { f0, amplitude } => format!("{}:periodic:{f0}:{amplitude}", self.name),
            GeneratorKind::Broadband { std } => format!("{}:broadband:{std}", self.name),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub side: usize,
    pub real_train: usize,
    /// Per pseudo-generator.
    pub fake_train: usize,
    pub real_test: usize,
    /// Per pseudo-generator.
    pub fake_test: usize,
    pub generators: Vec<PseudoGenerator>,
    pub base_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            side: 32,
            real_train: 1000,
            fake_train: 500,
            real_test: 250,
            fake_test: 250,
            generators: vec![
                PseudoGenerator::periodic("periodic_a", 6.0, 0.3),
                PseudoGenerator::periodic("periodic_b", 9.0, 0.25),
                PseudoGenerator::broadband("broadband_a", 0.12),
                PseudoGenerator::broadband("broadband_b", 0.18),
            ],
            base_sigma: 1.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.side < 5 {
            return bad(format!("image side {} too small", self.side));
        }
        if !(self.base_sigma >= 0.0) {
            return bad("base_sigma must be >= 0".into());
        }
        let mut names = std::collections::HashSet::new();
        for g in &self.generators {
            if g.name.is_empty() || g.name == super::manifest::REAL_GENERATOR || g.name.contains(['/', '\t', ',']) {
                return bad(format!("invalid generator name `{}`", g.name));
            }
            if !names.insert(&g.name) {
                return bad(format!("duplicate generator `{}`", g.name));
            }
            match g.kind {
                GeneratorKind::Periodic { f0, amplitude } => {
                    if !(f0 >= 2.0 && f0 < self.side as f64 / 2.0) {
                        return bad(format!("{}: f0 {f0} outside [2, N/2)", g.name));
                    }
                    if !(amplitude > 0.0) {
                        return bad(format!("{}: amplitude must be > 0", g.name));
                    }
                }
                GeneratorKind::Broadband { std } => {
                    if !(std > 0.0) {
                        return bad(format!("{}: noise std must be > 0", g.name));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Seeded white noise, blurred and affinely rescaled to [0.1, 0.9].
pub fn render_base(side: usize, base_sigma: f64, rng: &mut Prng) -> Result<Tensor> {
    let noise = Tensor::new(vec![side, side], (0..side * side).map(|_| rng.normal()).collect())?;
    let smooth = gaussian_blur(&noise, base_sigma)?;
    let (lo, hi) = smooth
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    Ok(smooth.map(|v| if span > 0.0 { 0.1 + 0.8 * (v - lo) / span } else { 0.5 }))
}

/// `cos(2π f0 x/N)·cos(2π f0 y/N)` scaled by `amplitude`.
pub fn periodic_pattern(side: usize, f0: f64, amplitude: f64) -> Tensor {
    let n = side as f64;
    let c: Vec<f64> = (0..side).map(|i| (2.0 * PI * f0 * i as f64 / n).cos()).collect();
    let data = (0..side * side)
        .map(|k| amplitude * c[k / side] * c[k % side])
        .collect();
    Tensor::new(vec![side, side], data).expect("sized")
}

/// Renders one image in [0, 1]; returns `(base, image)` before quantization.
pub fn render(side: usize, base_sigma: f64, kind: Option<&GeneratorKind>, rng: &mut Prng) -> Result<(Tensor, Tensor)> {
    let base = render_base(side, base_sigma, rng)?;
    let image = match kind {
        None => base.clone(),
        Some(GeneratorKind::Periodic { f0, amplitude }) => {
            base.zip_map(&periodic_pattern(side, *f0, *amplitude), |b, p| (b + p).clamp(0.0, 1.0))?
        }
        Some(GeneratorKind::Broadband { std }) => {
            let data = base.data().iter().map(|b| (b + std * rng.normal()).clamp(0.0, 1.0)).collect();
            Tensor::new(vec![side, side], data)?
        }
    };
    Ok((base, image))
}

fn tags(rng: &mut Prng) -> Vec<String> {
    let mut t = vec![if rng.next_f64() < 0.5 { "indoor" } else { "outdoor" }.to_string()];
    if rng.next_f64() < 0.3 {
        t.push("person".into());
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub train: Manifest,
    pub test: Manifest,
}

impl SynthCorpus {
    pub const TRAIN_MANIFEST: &'static str = "train.manifest";
    pub const TEST_MANIFEST: &'static str = "test.manifest";
}

struct Job {
    split: &'static str,
    split_id: u64,
    gen: Option<usize>,
    index: usize,
}

/// Writes `<dir>/<split>/<generator|real>/<index>.pgm` for both splits and
/// returns the train/test manifests (not yet written).
pub fn synth_generate(spec: &SyntheticSpec, dir: &Path) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for (split, split_id, n_real, n_fake) in [
        ("train", 0u64, spec.real_train, spec.fake_train),
        ("test", 1u64, spec.real_test, spec.fake_test),
    ] {
        jobs.extend((0..n_real).map(|index| Job { split, split_id, gen: None, index }));
        for g in 0..spec.generators.len() {
            jobs.extend((0..n_fake).map(|index| Job { split, split_id, gen: Some(g), index }));
        }
    }
    for split in ["train", "test"] {
        std::fs::create_dir_all(dir.join(split).join("real")).map_err(|e| Error::io(dir, e))?;
        for g in &spec.generators {
            let d = dir.join(split).join(&g.name);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }

    let results = crate::par::map(&jobs, |job| -> Result<Record> {
        let gen_slot = job.gen.map_or(0, |g| g as u64 + 1);
        let mut rng = Prng::derive(spec.seed, &[job.split_id, gen_slot, job.index as u64]);
        let generator = job.gen.map(|g| &spec.generators[g]);
        let (_, image) = render(spec.side, spec.base_sigma, generator.map(|g| &g.kind), &mut rng)?;
        let folder = generator.map_or("real", |g| g.name.as_str());
        let rel = format!("{}/{}/{:05}.pgm", job.split, folder, job.index);
        let path = dir.join(&rel);
        std::fs::write(&path, encode_pgm(&image)?).map_err(|e| Error::io(&path, e))?;
        let t = tags(&mut rng);
        Ok(match generator {
            None => Record::real(rel, t),
            Some(g) => Record::fake(rel, g.name.clone(), g.kind.family(), t),
        })
    });

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        if job.split_id == 0 {
            train.push(r?);
        } else {
            test.push(r?);
        }
    }
    let summary = format!(
        "# synthetic corpus: side={} base_sigma={} seed={} generators={}",
        spec.side,
        spec.base_sigma,
        spec.seed,
        spec.generators.iter().map(PseudoGenerator::describe).collect::<Vec<_>>().join(",")
    );
    let mut train = Manifest::new(dir, train)?;
    let mut test = Manifest::new(dir, test)?;
    train.comments.push((0, summary.clone()));
    test.comments.push((0, summary));
    Ok(SynthCorpus { train, test })
}
