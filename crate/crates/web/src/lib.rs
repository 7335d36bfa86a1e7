//! WebAssembly bindings for the degradation demo in `www/`.
//!
//! Every exported function returns RGBA bytes ready for `ImageData`. The
//! plain functions in [`ops`] do the work and are what the native tests call.

use wasm_bindgen::prelude::*;

pub mod ops;

fn js(e: fiqa_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Names of the selectable degradation families, clean excluded.
#[wasm_bindgen]
pub fn families() -> Vec<String> {
    ops::families().into_iter().map(String::from).collect()
}

/// The clean procedural face for `face_seed`.
#[wasm_bindgen]
pub fn render_face(face_seed: u32, size: u32) -> Result<Vec<u8>, JsError> {
    ops::render_face(face_seed as u64, size as usize).map(|img| ops::to_rgba(&img)).map_err(js)
}

/// The face under a synthetic degradation of `family` at `strength` in `[0, 1]`.
#[wasm_bindgen]
pub fn degrade(face_seed: u32, size: u32, family: &str, strength: f64, seed: u32) -> Result<Vec<u8>, JsError> {
    ops::degrade(face_seed as u64, size as usize, family, strength, seed as u64)
        .map(|img| ops::to_rgba(&img))
        .map_err(js)
}

/// The face under the capture-style pipeline for the same family.
#[wasm_bindgen]
pub fn capture(face_seed: u32, size: u32, family: &str, strength: f64, seed: u32) -> Result<Vec<u8>, JsError> {
    ops::capture(face_seed as u64, size as usize, family, strength, seed as u64)
        .map(|img| ops::to_rgba(&img))
        .map_err(js)
}

/// Recipe used by [`degrade`] as JSON, for display.
#[wasm_bindgen]
pub fn recipe_json(family: &str, strength: f64, seed: u32) -> Result<String, JsError> {
    ops::recipe(family, strength, seed as u64).map(|r| r.to_json()).map_err(js)
}

/// PSNR in dB of the synthetic degradation against the clean face.
#[wasm_bindgen]
pub fn degraded_psnr(face_seed: u32, size: u32, family: &str, strength: f64, seed: u32) -> Result<f64, JsError> {
    ops::degraded_psnr(face_seed as u64, size as usize, family, strength, seed as u64).map_err(js)
}

/// One face under every benchmark family at one strength, tiled left to right.
#[wasm_bindgen]
pub fn family_strip(face_seed: u32, size: u32, strength: f64, seed: u32) -> Result<Vec<u8>, JsError> {
    ops::family_strip(face_seed as u64, size as usize, strength, seed as u64)
        .map(|img| ops::to_rgba(&img))
        .map_err(js)
}
