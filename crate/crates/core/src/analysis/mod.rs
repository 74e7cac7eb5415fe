//! Spectral forensics, image perturbations, robustness sweeps and
//! embedding export.

pub mod blur;
pub mod export;
pub mod jpeg;
pub mod robust;
pub mod spectrum;

pub use blur::gaussian_blur;
pub use export::{export_embeddings, stage_features, ExportStage};
pub use jpeg::jpeg_like;
pub use robust::{curve_to_text, robustness_sweep, CurveRow, PerturbationSpec, DEFAULT_BLUR_GRID, DEFAULT_JPEG_GRID};
pub use spectrum::{dataset_mean_spectrum, detect_spikes, radial_power_spectrum, RadialSpectrum};
