//! Parameter-efficient adaptation of a frozen CLIP-style dual encoder for
//! synthetic-image detection, with the evaluation and forensics tooling
//! around it.

pub mod adaptation;
pub mod backbone;
pub mod error;
pub mod fft;
pub mod metrics;
pub mod ops;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ComplexGrid, Tensor};
pub mod analysis;
pub mod data;
mod par;
