//! Turning manifest records into in-memory training samples.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::mesh::{load_mesh, Mesh};
use crate::model::AbutmentParams;
use crate::patch::{build_patch_features, load_packed, save_packed, PatchFeatureSet};
use crate::remesh::{remesh_pipeline, RemeshConfig};
use crate::seed::derive_seed;
use crate::synth::{generate_case_with, ManifestRecord, Resolution, Split};
use crate::text::{render_prompt, EncodeMode, TextEmbedding, TextEncoder, TextPrompt};

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: usize,
    pub pfs: PatchFeatureSet,
    pub prompt: TextPrompt,
    pub text: TextEmbedding,
    pub label: AbutmentParams,
}

pub fn preprocess_mesh(mesh: &Mesh, remesh: &RemeshConfig) -> Result<PatchFeatureSet, TrainError> {
    let rm = remesh_pipeline(mesh, remesh)?;
    Ok(build_patch_features(&rm)?)
}

fn cache_name(record: &ManifestRecord, remesh: &RemeshConfig) -> String {
    let stem = record
        .mesh
        .as_deref()
        .and_then(|m| Path::new(m).file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("case{}", record.id));
    format!("{stem}-f{}-k{}-s{}.pack", remesh.base_faces, remesh.subdivision_levels, remesh.smooth as u8)
}

/// Loads, remeshes and featurizes one record, reusing `cache_dir` when given.
pub fn load_sample(
    record: &ManifestRecord,
    root: &Path,
    remesh: &RemeshConfig,
    encoder: &dyn TextEncoder,
    mode: EncodeMode,
    cache_dir: Option<&Path>,
) -> Result<Sample, TrainError> {
    let named = |e: TrainError| TrainError::Sample { id: record.id, source: Box::new(e) };
    let cached = cache_dir.map(|d| d.join(cache_name(record, remesh)));
    let pfs = match cached.as_ref().filter(|p| p.exists()) {
        Some(p) => load_packed(p).map_err(|e| named(e.into()))?,
        None => {
            let rel =
                record.mesh.as_deref().ok_or_else(|| named(TrainError::Config("record has no mesh path".into())))?;
            let mesh = load_mesh(&root.join(rel)).map_err(|e| named(e.into()))?;
            let pfs = preprocess_mesh(&mesh, remesh).map_err(named)?;
            if let Some(p) = &cached {
                std::fs::create_dir_all(p.parent().expect("cache dir")).map_err(|e| named(e.into()))?;
                save_packed(&pfs, p).map_err(|e| named(e.into()))?;
            }
            pfs
        }
    };
    let c = &record.case;
    let prompt = render_prompt(&c.location, &c.system, &c.series).map_err(|e| named(e.into()))?;
    let text = encoder.encode(&prompt, mode).map_err(|e| named(e.into()))?;
    Ok(Sample { id: record.id, pfs, prompt, text, label: c.labels() })
}

/// Builds a sample straight from the generator, skipping the mesh file.
pub fn synthesize_sample(
    record: &ManifestRecord,
    res: &Resolution,
    remesh: &RemeshConfig,
    encoder: &dyn TextEncoder,
    mode: EncodeMode,
) -> Result<Sample, TrainError> {
    let named = |e: TrainError| TrainError::Sample { id: record.id, source: Box::new(e) };
    let mesh = generate_case_with(&record.case, res).map_err(|e| named(e.into()))?;
    let pfs = preprocess_mesh(&mesh, remesh).map_err(named)?;
    let c = &record.case;
    let prompt = render_prompt(&c.location, &c.system, &c.series).map_err(|e| named(e.into()))?;
    let text = encoder.encode(&prompt, mode).map_err(|e| named(e.into()))?;
    Ok(Sample { id: record.id, pfs, prompt, text, label: c.labels() })
}

pub fn load_split(
    records: &[ManifestRecord],
    split: Split,
    root: &Path,
    remesh: &RemeshConfig,
    encoder: &dyn TextEncoder,
    mode: EncodeMode,
    cache_dir: Option<&Path>,
) -> Result<Vec<Sample>, TrainError> {
    records
        .iter()
        .filter(|r| r.split == split)
        .map(|r| load_sample(r, root, remesh, encoder, mode, cache_dir))
        .collect()
}

/// A seeded subset holding `round(fraction * n)` samples (at least one).
pub fn subset<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Vec<T> {
    if fraction >= 1.0 {
        return items.to_vec();
    }
    let k = ((fraction * items.len() as f64).round() as usize).clamp(1.min(items.len()), items.len());
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xf7ac])));
    let mut keep = idx[..k].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| items[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_sizes_and_order() {
        let items: Vec<usize> = (0..10).collect();
        assert_eq!(subset(&items, 1.0, 3), items);
        let half = subset(&items, 0.5, 3);
        assert_eq!(half.len(), 5);
        assert!(half.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(half, subset(&items, 0.5, 3));
        assert_eq!(subset(&items, 0.01, 3).len(), 1);
        assert!(subset::<usize>(&[], 0.5, 3).is_empty());
    }
}
