//! Manifests, image I/O, sampling and the synthetic corpus generator.

pub mod image;
pub mod manifest;
pub mod sampling;
pub mod synth;

pub use image::{load_image, save_pgm};
pub use manifest::{Family, Label, Manifest, Record};
pub use sampling::{fewshot_sample, split};
pub use synth::{synth_generate, GeneratorKind, PseudoGenerator, SynthCorpus, SyntheticSpec};
