//! Browser bindings for the demo page in `www/`.
//!
//! Three operations: an angular-error heatmap over the chromaticity plane,
//! a synthetic scene with its gray-world correction, and a per-channel gain
//! preview. Everything here is a thin wrapper over the core crate.

use cerberus::augment::{apply_gain, GainVector, SaturationPolicy};
use cerberus::baselines::gray_world;
use cerberus::imageio::LinearImage;
use cerberus::metrics::reproduction_error_raw;
use cerberus::synth::{synth_scene, SynthConfig};
use cerberus::GroundTruth;
use wasm_bindgen::prelude::*;

/// Reproduction angular error in degrees, or `undefined` for invalid input.
#[wasm_bindgen]
pub fn reproduction_error_deg(truth: &[f64], estimate: &[f64]) -> Option<f64> {
    let t: [f64; 3] = truth.try_into().ok()?;
    let p: [f64; 3] = estimate.try_into().ok()?;
    reproduction_error_raw(t, p).ok()
}

/// Row-major `size x size` grid of errors for estimates `(x, 1, y)` with
/// `x, y` spanning `(0, max_ratio]`; row 0 is the largest `y`.
#[wasm_bindgen]
pub fn error_heatmap(truth: &[f64], size: usize, max_ratio: f64) -> Vec<f32> {
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        let bg = max_ratio * (size - row) as f64 / size as f64;
        for col in 0..size {
            let rg = max_ratio * (col + 1) as f64 / size as f64;
            let e = reproduction_error_deg(truth, &[rg, 1.0, bg]).unwrap_or(f64::NAN);
            out.push(e as f32);
        }
    }
    out
}

#[wasm_bindgen]
pub struct Scene {
    image: LinearImage,
    gt: GroundTruth,
}

fn to_srgb8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0).powf(1.0 / 2.2) * 255.0).round() as u8
}

#[wasm_bindgen]
impl Scene {
    /// Synthetic scene `index` of the sequence for `seed`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, index: u32, size: usize) -> Result<Scene, String> {
        let cfg = SynthConfig {
            width: size,
            height: size,
            block_min: (size / 16).max(1),
            block_max: (size / 4).max(1),
            seed: seed.into(),
            ..Default::default()
        };
        let s = synth_scene(&cfg, index.into()).map_err(|e| e.to_string())?;
        Ok(Scene {
            image: s.image,
            gt: s.gt,
        })
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    /// Dominant illuminant, unit sum.
    pub fn truth(&self) -> Vec<f64> {
        self.gt.dominant().canonical().to_array().to_vec()
    }

    /// Gray-world estimate, unit sum.
    pub fn gray_world(&self) -> Vec<f64> {
        gray_world(&self.image)
            .map(|c| c.to_array().to_vec())
            .unwrap_or_default()
    }

    pub fn gray_world_error(&self) -> Option<f64> {
        reproduction_error_deg(&self.truth(), &self.gray_world())
    }

    /// RGBA preview. With an `illuminant` of three values each channel is
    /// divided by it first (von Kries correction).
    pub fn rgba(&self, illuminant: Option<Vec<f64>>) -> Vec<u8> {
        let sat = self.image.saturation.unwrap_or(1.0);
        let gain = match illuminant.as_deref() {
            Some([r, g, b]) if *r > 0.0 && *g > 0.0 && *b > 0.0 => [g / r, 1.0, g / b],
            _ => [1.0; 3],
        };
        // normalize so the brightest corrected sample maps to white
        let peak = self
            .image
            .data()
            .chunks_exact(3)
            .flat_map(|px| (0..3).map(move |c| f64::from(px[c]) * gain[c]))
            .fold(0.0, f64::max)
            .max(1e-12);
        let scale = if illuminant.is_some() { 1.0 / peak } else { 1.0 / sat };
        let mut out = Vec::with_capacity(self.image.width() * self.image.height() * 4);
        for px in self.image.data().chunks_exact(3) {
            for c in 0..3 {
                out.push(to_srgb8(f64::from(px[c]) * gain[c] * scale));
            }
            out.push(255);
        }
        out
    }

    /// A copy scaled by per-channel gains; clipped samples stay at the
    /// saturation level. Fails for darkening gains on clipped images.
    pub fn with_gain(&self, gr: f64, gg: f64, gb: f64) -> Result<Scene, String> {
        let gain = GainVector::new(gr, gg, gb).map_err(|e| e.to_string())?;
        let (image, gt) =
            apply_gain(&self.image, &self.gt, gain, SaturationPolicy::Reject).map_err(|e| e.to_string())?;
        Ok(Scene { image, gt })
    }
}
