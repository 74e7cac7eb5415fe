use std::fmt;
use std::fmt::Write;
use std::str::FromStr;

use crate::adaptation::Model;
use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportStage {
    /// Frozen tap-point features.
    RawFeature,
    /// After the adapter and `W_out`, in the space compared with class embeddings.
    PostAdapter,
}

impl fmt::Display for ExportStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportStage::RawFeature => "raw_feature",
            ExportStage::PostAdapter => "post_adapter",
        })
    }
}

impl FromStr for ExportStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw_feature" => Ok(ExportStage::RawFeature),
            "post_adapter" => Ok(ExportStage::PostAdapter),
            other => Err(Error::InvalidConfig(format!("unknown export stage `{other}`"))),
        }
    }
}

/// Vectors to export for tap-point features `x`.
pub fn stage_features(model: Option<&Model>, x: &Tensor, stage: ExportStage) -> Result<Tensor> {
    match stage {
        ExportStage::RawFeature => Ok(x.clone()),
        ExportStage::PostAdapter => match model {
            Some(Model::Adapt(s)) => s.head.project(&s.adapt(x)?),
            Some(Model::Probe(_)) => Err(Error::InvalidConfig(
                "a linear probe has no post-adapter space".into(),
            )),
            None => Err(Error::InvalidConfig("post_adapter export needs a trained state".into())),
        },
    }
}

/// `path<TAB>label<TAB>generator<TAB>v_1 … v_w`, one line per record in order.
pub fn export_embeddings(manifest: &Manifest, vectors: &Tensor) -> Result<String> {
    let (n, _) = vectors.dims2()?;
    if n != manifest.len() {
        return Err(Error::dim(format!("{n} vectors for {} records", manifest.len())));
    }
    let mut out = String::new();
    for (i, r) in manifest.records.iter().enumerate() {
        let values: Vec<String> = vectors.row(i).iter().map(|v| format!("{v:.9e}")).collect();
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.relative_path, r.label, r.generator, values.join("\t"));
    }
    Ok(out)
}
