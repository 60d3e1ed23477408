#![allow(dead_code)]

use abutment_core::synth::{build_dataset, Resolution};
use abutment_core::text::HashEncoder;
use abutment_core::trainer::{synthesize_sample, Sample, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect()
}

/// The first `n` cases of a seeded manifest, generated in memory.
pub fn samples(n: usize, seed: u64, cfg: &TrainConfig) -> Vec<Sample> {
    let manifest = build_dataset(n.max(20), 1.0, seed).unwrap();
    let enc = HashEncoder::new(cfg.model.text_width, cfg.seed);
    manifest.records[..n]
        .iter()
        .map(|r| synthesize_sample(r, &Resolution::default(), &cfg.remesh, &enc, cfg.model.text_mode).unwrap())
        .collect()
}

use abutment_core::mesh::{Mesh, Vec3};
use abutment_core::model::{FusionMode, ModelConfig};
use abutment_core::patch::{build_patch_features, PatchFeatureSet};
use abutment_core::remesh::subdivide;
use abutment_core::tensor::ParamStore;
use abutment_core::text::{EncodeMode, TextEmbedding};

/// Closed triangular bipyramid: six faces, so six patches.
pub fn bipyramid() -> Mesh {
    let v = vec![
        Vec3::new(0.0, 0.0, 1.3),
        Vec3::new(0.0, 0.0, -1.1),
        Vec3::new(1.0, 0.0, 0.1),
        Vec3::new(-0.5, 0.9, 0.0),
        Vec3::new(-0.6, -0.8, -0.1),
    ];
    let f = vec![[0, 2, 3], [0, 3, 4], [0, 4, 2], [1, 3, 2], [1, 4, 3], [1, 2, 4]];
    Mesh::new(v, f).unwrap()
}

pub fn tiny_pfs(levels: u32) -> PatchFeatureSet {
    build_patch_features(&subdivide(&bipyramid(), levels).unwrap()).unwrap()
}

/// Six patches, width 8, one block each side.
pub fn tiny_config(levels: u32) -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        encoder_blocks: 1,
        decoder_blocks: 1,
        heads: 2,
        mlp_ratio: 2.0,
        text_width: 6,
        levels,
        base_faces: 6,
        fusion: FusionMode::MeshQuery,
        text_mode: EncodeMode::Sentence,
        length_scale: 1.0,
        ..ModelConfig::default()
    }
}

pub fn random_text(rng: &mut ChaCha8Rng, tokens: usize, width: usize) -> TextEmbedding {
    let vals = (0..tokens * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    TextEmbedding { vectors: abutment_core::tensor::Tensor::from_vec(&[tokens, width], vals).unwrap() }
}

/// Nudges every parameter off its initializer (zero biases, unit gains) so
/// gradient checks exercise generic values.
pub fn jitter(store: &mut ParamStore, seed: u64, amount: f64) {
    let mut r = rng(seed);
    for p in store.iter_mut() {
        for v in p.tensor.values_mut() {
            *v += r.random_range(-amount..amount);
        }
    }
}

/// Width-16 network on 500 patches refined once; quick enough for many short runs.
pub fn small_train_config() -> TrainConfig {
    let mut cfg = TrainConfig { epochs: 1, batch_size: 2, learning_rate: 1e-3, ..TrainConfig::default() };
    cfg.model = ModelConfig {
        embed_dim: 16,
        encoder_blocks: 1,
        decoder_blocks: 1,
        heads: 2,
        text_width: 16,
        levels: 1,
        ..ModelConfig::default()
    };
    cfg.remesh.subdivision_levels = 1;
    cfg
}

fn dist(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        s += (p[k] - q[k]) * (p[k] - q[k]);
    }
    s.sqrt()
}

pub fn chamfer_oracle(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let mut ab = 0.0;
    for p in a {
        let mut best = f64::MAX;
        for q in b {
            if dist(p, q) < best {
                best = dist(p, q);
            }
        }
        ab += best;
    }
    let mut ba = 0.0;
    for q in b {
        let mut best = f64::MAX;
        for p in a {
            if dist(p, q) < best {
                best = dist(p, q);
            }
        }
        ba += best;
    }
    ab / a.len() as f64 + ba / b.len() as f64
}

/// Overlap over union of two unit intervals counted on a 1e-4 grid.
pub fn grid_iou(pv: f64, gt: f64) -> f64 {
    let h = 1e-4;
    let lo = pv.min(gt);
    let hi = pv.max(gt) + 1.0;
    let steps = ((hi - lo) / h).ceil() as usize;
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..steps {
        let x = lo + (i as f64 + 0.5) * h;
        let a = x >= pv && x <= pv + 1.0;
        let b = x >= gt && x <= gt + 1.0;
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    inter as f64 / union as f64
}
