//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export is a thin wrapper over a function in [`demo`], which is plain
//! Rust and tested natively.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(e: adaptprompt::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Grayscale pixels of one rendered image, row-major in [0, 1].
/// `kind` is `real`, `periodic` or `broadband`; `strength` is the periodic
/// amplitude or the broadband noise std.
#[wasm_bindgen]
pub fn render_image(kind: &str, side: usize, f0: f64, strength: f64, seed: u32) -> Result<Vec<f64>, JsValue> {
    demo::render_image(kind, side, f0, strength, seed as u64).map_err(js)
}

/// Mean radial power spectrum of `count` images, in log10.
#[wasm_bindgen]
pub fn mean_log_spectrum(kind: &str, side: usize, f0: f64, strength: f64, count: usize, seed: u32) -> Result<Vec<f64>, JsValue> {
    demo::mean_spectrum(kind, side, f0, strength, count, seed as u64)
        .map(|s| demo::log10(&s.mean_power))
        .map_err(js)
}

/// Spike bins of the same mean spectrum.
#[wasm_bindgen]
pub fn spike_bins(kind: &str, side: usize, f0: f64, strength: f64, count: usize, seed: u32) -> Result<Vec<u32>, JsValue> {
    demo::mean_spectrum(kind, side, f0, strength, count, seed as u64)
        .map(|s| demo::spikes(&s))
        .map_err(js)
}

/// Blurs (`blur`, param = sigma) or recompresses (`jpeg`, param = quality).
#[wasm_bindgen]
pub fn perturb(pixels: &[f64], side: usize, kind: &str, param: f64) -> Result<Vec<f64>, JsValue> {
    demo::perturb(pixels, side, kind, param).map_err(js)
}

/// Class probabilities for a unit feature at `feature_deg` against unit class
/// embeddings at `class_deg`, with temperature `tau`.
#[wasm_bindgen]
pub fn class_probabilities(feature_deg: f64, class_deg: &[f64], tau: f64) -> Result<Vec<f64>, JsValue> {
    demo::class_probabilities(feature_deg, class_deg, tau).map_err(js)
}
