use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown op `{0}`")]
    UnknownOp(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("weights format error: {0}")]
    Format(String),

    #[error("CRC mismatch over payload bytes {start}..{end}: stored {stored:#010x}, computed {computed:#010x}")]
    Crc {
        start: usize,
        end: usize,
        stored: u32,
        computed: u32,
    },

    #[error("unknown token `{0}` (not present in vocabulary)")]
    UnknownToken(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("image error in {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("empty manifest")]
    EmptyManifest,

    #[error("{0}")]
    Data(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("backbone parameters changed during training (hash {before} -> {after})")]
    BackboneMutated { before: String, after: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
