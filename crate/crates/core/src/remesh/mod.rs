//! Subdivision-regular remeshing: simplify to a base mesh, then refine every
//! base face `K` times so each base face becomes a patch of `4^K` faces.

mod patchmap_io;
mod simplify;
mod subdivide;

use serde::{Deserialize, Serialize};

use crate::mesh::{validate_manifold, Mesh, MeshError, Vec3};

pub use patchmap_io::{load_remeshed, read_patch_map, save_remeshed, write_patch_map};
pub use simplify::simplify;
pub use subdivide::{faces_per_patch, subdivide, subdivide_with, vertices_per_patch};

/// Upper bound on subdivision depth (memory guard).
pub const MAX_LEVELS: u32 = 6;

#[derive(Debug, thiserror::Error)]
pub enum RemeshError {
    #[error("mesh is not manifold: non-manifold edges {edges:?}, non-manifold vertices {vertices:?}")]
    NonManifold { edges: Vec<(usize, usize)>, vertices: Vec<usize> },
    #[error("cannot simplify {faces} faces up to {target}")]
    TargetTooLarge { faces: usize, target: usize },
    #[error("simplification stalled at {reached} faces (target {target}) without breaking manifoldness")]
    Unreachable { reached: usize, target: usize },
    #[error("{0} subdivision levels exceeds the limit of {MAX_LEVELS}")]
    LevelsTooDeep(u32),
    #[error("invalid remesh configuration: {0}")]
    Config(String),
    #[error("patch map file: {0}")]
    Format(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("remesh io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemeshConfig {
    /// Face count of the simplified base mesh; also the patch count.
    pub base_faces: usize,
    pub subdivision_levels: u32,
    /// Loop-style vertex smoothing during subdivision.
    pub smooth: bool,
}

impl Default for RemeshConfig {
    fn default() -> Self {
        Self { base_faces: 500, subdivision_levels: 3, smooth: false }
    }
}

impl RemeshConfig {
    pub fn validate(&self) -> Result<(), RemeshError> {
        if self.base_faces < 4 {
            return Err(RemeshError::Config(format!("base_faces must be at least 4, got {}", self.base_faces)));
        }
        if self.subdivision_levels > MAX_LEVELS {
            return Err(RemeshError::LevelsTooDeep(self.subdivision_levels));
        }
        Ok(())
    }
}

/// Base-face hierarchy of a refined mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMap {
    pub levels: u32,
    /// Per patch, refined face indices in canonical hierarchy order.
    pub patch_faces: Vec<Vec<usize>>,
    /// Per patch, distinct vertex indices in order of first appearance.
    pub patch_vertices: Vec<Vec<usize>>,
    /// Centroid of each patch's face centroids.
    pub patch_centers: Vec<Vec3>,
}

impl PatchMap {
    pub fn patch_count(&self) -> usize {
        self.patch_faces.len()
    }

    pub fn faces_per_patch(&self) -> usize {
        faces_per_patch(self.levels)
    }

    pub fn vertices_per_patch(&self) -> usize {
        vertices_per_patch(self.levels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemeshedMesh {
    pub mesh: Mesh,
    pub patch_map: PatchMap,
    pub config: RemeshConfig,
}

/// Validate, simplify to `base_faces`, then subdivide.
pub fn remesh_pipeline(mesh: &Mesh, config: &RemeshConfig) -> Result<RemeshedMesh, RemeshError> {
    config.validate()?;
    let report = validate_manifold(mesh);
    if !report.is_manifold {
        return Err(RemeshError::NonManifold {
            edges: report.non_manifold_edges,
            vertices: report.non_manifold_vertices,
        });
    }
    let base = simplify(mesh, config.base_faces)?;
    subdivide_with(&base, config.subdivision_levels, config.smooth)
}
