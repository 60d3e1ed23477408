//! wasm-bindgen surface for `www/index.html`. Plain Rust types only, so the
//! same functions run and test natively.

use abutment_core::model::AbutmentParams;
use abutment_core::objectives;
use abutment_core::patch::MaskSpec;
use abutment_core::remesh::{remesh_pipeline, RemeshConfig};
use abutment_core::synth::{generate_case, CaseSpec};
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RemeshStats {
    pub input_faces: u32,
    pub patches: u32,
    pub faces: u32,
    pub faces_per_patch: u32,
    pub vertices_per_patch: u32,
}

/// Generates one synthetic case, simplifies it to `base_faces` and
/// subdivides each face `levels` times.
#[wasm_bindgen]
pub fn remesh_case(
    seed: u32,
    transgingival: f64,
    diameter: f64,
    height: f64,
    base_faces: u32,
    levels: u32,
) -> Result<RemeshStats, String> {
    let spec =
        CaseSpec::new(seed as u64, AbutmentParams::new(transgingival, diameter, height), "Bottom-46", "OSSTEM", 0.5);
    let mesh = generate_case(&spec).map_err(|e| e.to_string())?;
    let cfg = RemeshConfig { base_faces: base_faces as usize, subdivision_levels: levels, ..RemeshConfig::default() };
    let rm = remesh_pipeline(&mesh, &cfg).map_err(|e| e.to_string())?;
    let map = &rm.patch_map;
    Ok(RemeshStats {
        input_faces: mesh.face_count() as u32,
        patches: map.patch_count() as u32,
        faces: rm.mesh.face_count() as u32,
        faces_per_patch: map.faces_per_patch() as u32,
        vertices_per_patch: map.vertices_per_patch() as u32,
    })
}

#[wasm_bindgen]
pub fn interval_iou(pred: f64, truth: f64) -> f64 {
    objectives::interval_iou(pred, truth)
}

/// IoU against a fixed truth for `samples` offsets spread evenly over `[-max_offset, max_offset]`.
#[wasm_bindgen]
pub fn iou_curve(max_offset: f64, samples: usize) -> Vec<f64> {
    let n = samples.max(2) as i64;
    (0..n).map(|i| objectives::interval_iou(max_offset * (2 * i - (n - 1)) as f64 / (n - 1) as f64, 0.0)).collect()
}

/// One byte per patch: 1 where the patch is hidden from the encoder.
#[wasm_bindgen]
pub fn mask_pattern(count: usize, ratio: f64, seed: u32) -> Result<Vec<u8>, String> {
    let m = MaskSpec::sample(count, ratio, seed as u64).map_err(|e| e.to_string())?;
    let mut out = vec![0u8; count];
    for &i in &m.masked {
        out[i] = 1;
    }
    Ok(out)
}
