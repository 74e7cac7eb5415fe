use std::fmt;
use std::fmt::Write;
use std::str::FromStr;

use super::{gaussian_blur, jpeg_like};
use crate::adaptation::features::encode_images;
use crate::adaptation::Model;
use crate::backbone::{BackboneParams, Variant};
use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, scored_samples, SubconfigGroups};
use crate::par;
use crate::tensor::Tensor;

pub const DEFAULT_BLUR_GRID: [f64; 4] = [0.0, 0.5, 1.0, 2.0];
pub const DEFAULT_JPEG_GRID: [u32; 4] = [95, 85, 75, 50];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PerturbationSpec {
    Blur { sigma: f64 },
    JpegLike { quality: u32 },
}

impl PerturbationSpec {
    pub fn blur(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("blur sigma must be >= 0, got {sigma}")));
        }
        Ok(Self::Blur { sigma })
    }

    pub fn jpeg(quality: u32) -> Result<Self> {
        if !(1..=100).contains(&quality) {
            return Err(Error::InvalidConfig(format!("jpeg quality {quality} outside 1..=100")));
        }
        Ok(Self::JpegLike { quality })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Blur { .. } => "blur",
            Self::JpegLike { .. } => "jpeg",
        }
    }

    pub fn param(&self) -> f64 {
        match *self {
            Self::Blur { sigma } => sigma,
            Self::JpegLike { quality } => quality as f64,
        }
    }

    /// Larger is harsher for both kinds.
    fn intensity(&self) -> f64 {
        match *self {
            Self::Blur { sigma } => sigma,
            Self::JpegLike { quality } => -(quality as f64),
        }
    }

    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        match *self {
            Self::Blur { sigma } => gaussian_blur(image, sigma),
            Self::JpegLike { quality } => jpeg_like(image, quality),
        }
    }

    /// Blur σ grid followed by the jpeg quality grid.
    pub fn default_grid() -> Vec<Self> {
        DEFAULT_BLUR_GRID
            .iter()
            .map(|&sigma| Self::Blur { sigma })
            .chain(DEFAULT_JPEG_GRID.iter().map(|&quality| Self::JpegLike { quality }))
            .collect()
    }
}

impl fmt::Display for PerturbationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind(), self.param())
    }
}

impl FromStr for PerturbationSpec {
    type Err = Error;

    /// `blur:<sigma>` or `jpeg:<quality>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("perturbation `{s}` is not blur:<sigma> or jpeg:<quality>"));
        let (kind, v) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "blur" => Self::blur(v.parse().map_err(|_| bad())?),
            "jpeg" => Self::jpeg(v.parse().map_err(|_| bad())?),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub spec: PerturbationSpec,
    pub ap: f64,
    pub accuracy: f64,
}

/// Re-scores `images` under every perturbation and reports mAP and mean
/// accuracy per setting. Rows are grouped by kind (first appearance) and
/// ordered from mildest to harshest within a kind.
pub fn robustness_sweep(
    model: &Model,
    backbone: &BackboneParams,
    variant: Variant,
    manifest: &Manifest,
    images: &[Tensor],
    specs: &[PerturbationSpec],
    groups: &SubconfigGroups,
) -> Result<Vec<CurveRow>> {
    if images.len() != manifest.len() {
        return Err(Error::dim("one image per manifest record is required"));
    }
    let mut ordered: Vec<(usize, PerturbationSpec)> = Vec::new();
    let kinds: Vec<&str> = specs.iter().map(|s| s.kind()).fold(Vec::new(), |mut acc, k| {
        if !acc.contains(&k) {
            acc.push(k);
        }
        acc
    });
    for (ki, k) in kinds.iter().enumerate() {
        let mut of_kind: Vec<PerturbationSpec> = specs.iter().copied().filter(|s| s.kind() == *k).collect();
        of_kind.sort_by(|a, b| a.intensity().total_cmp(&b.intensity()));
        ordered.extend(of_kind.into_iter().map(|s| (ki, s)));
    }
    ordered
        .into_iter()
        .map(|(_, spec)| {
            let perturbed: Vec<Tensor> = par::map(images, |img| spec.apply(img))
                .into_iter()
                .collect::<Result<_>>()?;
            let x = encode_images(backbone, &perturbed, variant)?;
            let scores = model.predict_scores(backbone, &x)?;
            let report = evaluate(&scored_samples(manifest, &scores)?, groups)?;
            Ok(CurveRow {
                spec,
                ap: report.map,
                accuracy: report.overall_accuracy,
            })
        })
        .collect()
}

/// `kind<TAB>param<TAB>AP<TAB>ACC` lines.
pub fn curve_to_text(rows: &[CurveRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}",
            r.spec.kind(),
            r.spec.param(),
            r.ap,
            r.accuracy
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        assert_eq!("blur:1.5".parse::<PerturbationSpec>().unwrap(), PerturbationSpec::Blur { sigma: 1.5 });
        assert_eq!("jpeg:75".parse::<PerturbationSpec>().unwrap(), PerturbationSpec::JpegLike { quality: 75 });
        for bad in ["blur:-1", "jpeg:0", "jpeg:101", "jpeg:7.5", "sharpen:1", "blur"] {
            assert!(bad.parse::<PerturbationSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn default_grid_shape() {
        let g = PerturbationSpec::default_grid();
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], PerturbationSpec::Blur { sigma: 0.0 });
        assert_eq!(g[7], PerturbationSpec::JpegLike { quality: 50 });
    }
}
