//! Network-ready patch tensors and random patch masking.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mesh::{face_features, MeshError, FEATURE_DIM};
use crate::remesh::{faces_per_patch, vertices_per_patch, RemeshedMesh, MAX_LEVELS};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum PatchError {
    #[error("patch {patch}: {source}")]
    Face {
        patch: usize,
        #[source]
        source: MeshError,
    },
    #[error("mask ratio {0} outside [0, 1]")]
    Ratio(f64),
    #[error("packed sample: {0}")]
    Format(String),
    #[error("packed sample io: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-patch inputs and reconstruction targets of one remeshed sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureSet {
    pub levels: u32,
    /// `[patches, 13 * 4^K]`, face features concatenated in hierarchy order.
    pub features: Tensor,
    /// `[patches, 3]`.
    pub centers: Tensor,
    /// `[patches, 3 * V]`, xyz of each patch vertex minus the patch center.
    pub patch_vertex_rel: Tensor,
}

impl PatchFeatureSet {
    pub fn patch_count(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_width(&self) -> usize {
        self.features.cols()
    }

    pub fn vertices_per_patch(&self) -> usize {
        self.patch_vertex_rel.cols() / 3
    }

    /// Absolute vertex positions of one patch.
    pub fn absolute_vertices(&self, patch: usize) -> Vec<[f64; 3]> {
        let c = self.centers.row(patch);
        self.patch_vertex_rel.row(patch).chunks_exact(3).map(|v| [v[0] + c[0], v[1] + c[1], v[2] + c[2]]).collect()
    }

    /// Copy with patch rows reordered so that row `i` is old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            levels: self.levels,
            features: self.features.select_rows(order),
            centers: self.centers.select_rows(order),
            patch_vertex_rel: self.patch_vertex_rel.select_rows(order),
        }
    }
}

pub fn feature_width(levels: u32) -> usize {
    faces_per_patch(levels) * FEATURE_DIM
}

pub fn build_patch_features(rm: &RemeshedMesh) -> Result<PatchFeatureSet, PatchError> {
    let map = &rm.patch_map;
    let mesh = &rm.mesh;
    let n = map.patch_count();
    let width = feature_width(map.levels);
    let nv = vertices_per_patch(map.levels);
    let mut features = Vec::with_capacity(n * width);
    let mut centers = Vec::with_capacity(n * 3);
    let mut rel = Vec::with_capacity(n * nv * 3);
    for p in 0..n {
        for &f in &map.patch_faces[p] {
            let ff = face_features(mesh, f).map_err(|source| PatchError::Face { patch: p, source })?;
            features.extend_from_slice(&ff.to_array());
        }
        let c = map.patch_centers[p];
        centers.extend_from_slice(&[c.x, c.y, c.z]);
        for &v in &map.patch_vertices[p] {
            let d = mesh.vertices()[v] - c;
            rel.extend_from_slice(&[d.x, d.y, d.z]);
        }
    }
    Ok(PatchFeatureSet {
        levels: map.levels,
        features: Tensor::from_vec(&[n, width], features).expect("feature layout"),
        centers: Tensor::from_vec(&[n, 3], centers).expect("center layout"),
        patch_vertex_rel: Tensor::from_vec(&[n, nv * 3], rel).expect("vertex layout"),
    })
}

/// A masked/visible partition of patch indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub ratio: f64,
    pub seed: u64,
    pub masked: Vec<usize>,
    pub visible: Vec<usize>,
}

impl MaskSpec {
    /// Uniform subset of `round(ratio * count)` patches, rounding half away from zero.
    pub fn sample(count: usize, ratio: f64, seed: u64) -> Result<Self, PatchError> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(PatchError::Ratio(ratio));
        }
        let k = ((ratio * count as f64).round() as usize).min(count);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut masked = rand::seq::index::sample(&mut rng, count, k).into_vec();
        masked.sort_unstable();
        let mut is_masked = vec![false; count];
        for &m in &masked {
            is_masked[m] = true;
        }
        let visible = (0..count).filter(|&i| !is_masked[i]).collect();
        Ok(Self { ratio, seed, masked, visible })
    }

    pub fn patch_count(&self) -> usize {
        self.masked.len() + self.visible.len()
    }
}

pub fn mask_patches(pfs: &PatchFeatureSet, ratio: f64, seed: u64) -> Result<MaskSpec, PatchError> {
    MaskSpec::sample(pfs.patch_count(), ratio, seed)
}

const PACK_MAGIC: &[u8; 8] = b"ABTPACK\0";
const PACK_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<(), PatchError> {
    let v = u32::try_from(v).map_err(|_| PatchError::Format(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize, PatchError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn put_f64s(w: &mut impl Write, xs: &[f64]) -> Result<(), PatchError> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, PatchError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Layout: magic, `u32` version, `u32` patch count, `u32` levels, then
/// features, centers and relative vertices as little-endian `f64` rows.
pub fn write_packed(pfs: &PatchFeatureSet, w: &mut impl Write) -> Result<(), PatchError> {
    w.write_all(PACK_MAGIC)?;
    w.write_all(&PACK_VERSION.to_le_bytes())?;
    put_u32(w, pfs.patch_count())?;
    put_u32(w, pfs.levels as usize)?;
    put_f64s(w, pfs.features.values())?;
    put_f64s(w, pfs.centers.values())?;
    put_f64s(w, pfs.patch_vertex_rel.values())?;
    Ok(())
}

pub fn read_packed(r: &mut impl Read) -> Result<PatchFeatureSet, PatchError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != PACK_MAGIC {
        return Err(PatchError::Format("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != PACK_VERSION as usize {
        return Err(PatchError::Format(format!("unsupported version {version}")));
    }
    let n = get_u32(r)?;
    let levels = get_u32(r)? as u32;
    if levels > MAX_LEVELS {
        return Err(PatchError::Format(format!("levels {levels} too deep")));
    }
    let (w, nv) = (feature_width(levels), vertices_per_patch(levels));
    let features = Tensor::from_vec(&[n, w], get_f64s(r, n * w)?).expect("layout");
    let centers = Tensor::from_vec(&[n, 3], get_f64s(r, n * 3)?).expect("layout");
    let rel = Tensor::from_vec(&[n, nv * 3], get_f64s(r, n * nv * 3)?).expect("layout");
    Ok(PatchFeatureSet { levels, features, centers, patch_vertex_rel: rel })
}

pub fn save_packed(pfs: &PatchFeatureSet, path: &Path) -> Result<(), PatchError> {
    let mut buf = Vec::new();
    write_packed(pfs, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_packed(path: &Path) -> Result<PatchFeatureSet, PatchError> {
    let bytes = std::fs::read(path)?;
    read_packed(&mut bytes.as_slice())
}
