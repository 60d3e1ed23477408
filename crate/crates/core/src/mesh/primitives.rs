//! Small closed meshes and fixtures.

use std::collections::HashMap;

use super::{Mesh, Vec3};

pub fn tetrahedron() -> Mesh {
    let v = vec![
        Vec3::new(1.0, 1.0, 1.0),
        Vec3::new(1.0, -1.0, -1.0),
        Vec3::new(-1.0, 1.0, -1.0),
        Vec3::new(-1.0, -1.0, 1.0),
    ];
    Mesh::new(v, vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]]).expect("tetrahedron")
}

/// A closed tetrahedron plus an open one sharing edge (0, 1): that edge ends
/// up with three incident faces.
pub fn fin_on_tetrahedron() -> Mesh {
    let t = tetrahedron();
    let mut v = t.vertices().to_vec();
    v.push(Vec3::new(2.5, 0.0, 0.0));
    v.push(Vec3::new(2.0, 1.5, 1.0));
    let mut f = t.faces().to_vec();
    f.extend_from_slice(&[[0, 4, 1], [0, 5, 4], [1, 4, 5]]);
    Mesh::new(v, f).expect("fin fixture")
}

/// Regular icosahedron inscribed in the unit sphere, faces wound outward.
pub fn icosahedron() -> Mesh {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ];
    let v: Vec<Vec3> = raw.iter().map(|c| Vec3::new(c[0], c[1], c[2]).normalize()).collect();
    let mut f = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for face in &mut f {
        let (a, b, c) = (v[face[0]], v[face[1]], v[face[2]]);
        if (b - a).cross(&(c - a)).dot(&(a + b + c)) < 0.0 {
            face.swap(1, 2);
        }
    }
    Mesh::new(v, f).expect("icosahedron")
}

/// Icosahedron refined `levels` times by 1-to-4 splits and projected to the
/// unit sphere: `20 * 4^levels` faces.
pub fn icosphere(levels: u32) -> Mesh {
    let base = icosahedron();
    let mut v = base.vertices().to_vec();
    let mut f = base.faces().to_vec();
    for _ in 0..levels {
        let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, v: &mut Vec<Vec3>| {
            *mids.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            next.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        f = next;
    }
    Mesh::new(v, f).expect("icosphere")
}
