use super::{Mesh, MeshError, DEGENERATE_AREA};

/// Width of one face descriptor.
pub const FEATURE_DIM: usize = 13;

/// Per-face descriptor. Serialized as
/// `[area, normal(3), angles(3), center(3), normal_dots(3)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceFeature13 {
    pub area: f64,
    pub normal: [f64; 3],
    /// Interior angle at each corner, in stored vertex order (radians).
    pub angles: [f64; 3],
    pub center: [f64; 3],
    /// Face normal dotted with each corner's vertex normal, in vertex order.
    pub normal_dots: [f64; 3],
}

impl FaceFeature13 {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        out[0] = self.area;
        out[1..4].copy_from_slice(&self.normal);
        out[4..7].copy_from_slice(&self.angles);
        out[7..10].copy_from_slice(&self.center);
        out[10..13].copy_from_slice(&self.normal_dots);
        out
    }

    pub fn from_array(a: &[f64; FEATURE_DIM]) -> Self {
        Self {
            area: a[0],
            normal: [a[1], a[2], a[3]],
            angles: [a[4], a[5], a[6]],
            center: [a[7], a[8], a[9]],
            normal_dots: [a[10], a[11], a[12]],
        }
    }
}

pub fn face_features(mesh: &Mesh, face: usize) -> Result<FaceFeature13, MeshError> {
    let cross = mesh.face_cross(face);
    let area = 0.5 * cross.norm();
    if !(area >= DEGENERATE_AREA) {
        return Err(MeshError::DegenerateFace { face, area });
    }
    let normal = cross / cross.norm();
    let corners = mesh.corners(face);
    let mut angles = [0.0; 3];
    for (k, angle) in angles.iter_mut().enumerate() {
        let p = corners[k];
        let u = corners[(k + 1) % 3] - p;
        let w = corners[(k + 2) % 3] - p;
        *angle = u.cross(&w).norm().atan2(u.dot(&w));
    }
    let center = mesh.face_centroid(face);
    let idx = mesh.faces()[face];
    let vn = mesh.vertex_normals();
    let normal_dots = [normal.dot(&vn[idx[0]]), normal.dot(&vn[idx[1]]), normal.dot(&vn[idx[2]])];
    Ok(FaceFeature13 {
        area,
        normal: [normal.x, normal.y, normal.z],
        angles,
        center: [center.x, center.y, center.z],
        normal_dots,
    })
}

/// Features for every face, in face-index order.
pub fn all_face_features(mesh: &Mesh) -> Result<Vec<FaceFeature13>, MeshError> {
    (0..mesh.face_count()).map(|f| face_features(mesh, f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Vec3;
    use std::f64::consts::PI;

    fn equilateral() -> Mesh {
        let h = 3f64.sqrt() / 2.0;
        Mesh::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.5, h, 0.0)], vec![[0, 1, 2]])
            .unwrap()
    }

    #[test]
    fn equilateral_unit_triangle() {
        let f = face_features(&equilateral(), 0).unwrap();
        // Hand values: area = sqrt(3)/4, every angle = pi/3.
        assert!((f.area - 0.433_012_701_892_219_3).abs() < 1e-12);
        for a in f.angles {
            assert!((a - PI / 3.0).abs() < 1e-12);
        }
        assert_eq!(f.normal, [0.0, 0.0, 1.0]);
        assert!((f.center[0] - 0.5).abs() < 1e-15);
        assert!((f.center[1] - 3f64.sqrt() / 6.0).abs() < 1e-15);
        assert_eq!(f.normal_dots, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn collinear_face_is_degenerate() {
        let m = Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 1, 3], [1, 2, 3]],
        )
        .unwrap();
        assert!(matches!(face_features(&m, 0), Err(MeshError::DegenerateFace { face: 0, .. })));
    }

    #[test]
    fn layout_roundtrip() {
        let f = face_features(&equilateral(), 0).unwrap();
        assert_eq!(FaceFeature13::from_array(&f.to_array()), f);
    }
}
