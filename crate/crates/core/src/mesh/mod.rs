//! Indexed triangle meshes: validation, file IO and per-face features.

mod features;
mod io;
pub mod primitives;
mod validate;

use nalgebra::{Matrix3, Vector3};

pub use features::{all_face_features, face_features, FaceFeature13, FEATURE_DIM};
pub use io::{load_mesh, parse_obj, save_mesh, write_obj};
pub use validate::{validate_manifold, ValidationReport};

pub type Vec3 = Vector3<f64>;

/// Faces whose area falls below this (mm²) are degenerate.
pub const DEGENERATE_AREA: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("mesh has no faces")]
    Empty,
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },
    #[error("face {0} repeats a vertex index")]
    RepeatedIndex(usize),
    #[error("vertex {0} has a zero-length normal (isolated or only degenerate faces)")]
    ZeroNormal(usize),
    #[error("face {face} is degenerate (area {area:e})")]
    DegenerateFace { face: usize, area: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("mesh io: {0}")]
    Io(#[from] std::io::Error),
}

/// Triangle mesh with area-weighted unit vertex normals.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    vertex_normals: Vec<Vec3>,
}

impl Mesh {
    /// Checks indices and derives vertex normals.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if faces.is_empty() {
            return Err(MeshError::Empty);
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&index) = f.iter().find(|&&i| i >= n) {
                return Err(MeshError::IndexOutOfRange { face: fi, index, count: n });
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::RepeatedIndex(fi));
            }
        }
        let vertex_normals = compute_vertex_normals(&vertices, &faces)?;
        Ok(Self { vertices, faces, vertex_normals })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_normals(&self) -> &[Vec3] {
        &self.vertex_normals
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn corners(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    /// Unnormalized normal whose length is twice the face area.
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.corners(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn face_centroid(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.corners(face);
        (a + b + c) / 3.0
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Applies `x -> rotation * x * scale + translation` to every vertex.
    pub fn transformed(&self, rotation: &Matrix3<f64>, scale: f64, translation: &Vec3) -> Result<Self, MeshError> {
        let vertices = self.vertices.iter().map(|v| rotation * v * scale + translation).collect();
        Self::new(vertices, self.faces.clone())
    }

    pub fn translated(&self, t: &Vec3) -> Result<Self, MeshError> {
        self.transformed(&Matrix3::identity(), 1.0, t)
    }

    /// Same geometry with faces stored in the order given by `order`
    /// (`order[k]` is the old index of the new k-th face).
    pub fn with_face_order(&self, order: &[usize]) -> Result<Self, MeshError> {
        let faces = order.iter().map(|&i| self.faces[i]).collect();
        Self::new(self.vertices.clone(), faces)
    }
}

fn compute_vertex_normals(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<Vec<Vec3>, MeshError> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        // The cross product length is twice the area, which gives area weighting.
        let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
        for &i in f {
            acc[i] += n;
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                Ok(n / len)
            } else {
                Err(MeshError::ZeroNormal(i))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_indices() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(matches!(Mesh::new(v.clone(), vec![[0, 1, 99]]), Err(MeshError::IndexOutOfRange { index: 99, .. })));
        assert!(matches!(Mesh::new(v.clone(), vec![[0, 1, 1]]), Err(MeshError::RepeatedIndex(0))));
        assert!(matches!(Mesh::new(v, vec![]), Err(MeshError::Empty)));
    }

    #[test]
    fn isolated_vertex_has_no_normal() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        assert!(matches!(Mesh::new(v, vec![[0, 1, 2]]), Err(MeshError::ZeroNormal(3))));
    }

    #[test]
    fn vertex_normals_are_unit() {
        let m = primitives::icosphere(2);
        for n in m.vertex_normals() {
            assert!((n.norm() - 1.0).abs() < 1e-12);
        }
    }
}
