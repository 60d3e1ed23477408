//! Hierarchical 1-to-4 subdivision with base-face patch tracking.
//!
//! A face `(a, b, c)` with edge midpoints `ab, bc, ca` splits into the corner
//! children `(a, ab, ca)`, `(ab, b, bc)`, `(ca, bc, c)` followed by the center
//! child `(ab, bc, ca)`. Expanding every face in place with this order at every
//! level yields the depth-first canonical face order within a patch.

use std::collections::HashMap;

use super::{PatchMap, RemeshConfig, RemeshError, RemeshedMesh, MAX_LEVELS};
use crate::mesh::{Mesh, Vec3};

/// Number of distinct vertices in one patch after `levels` subdivisions.
pub fn vertices_per_patch(levels: u32) -> usize {
    let s = (1usize << levels) + 1;
    s * (s + 1) / 2
}

pub fn faces_per_patch(levels: u32) -> usize {
    1usize << (2 * levels)
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Loop-scheme vertex positions for one refinement level, given the coarse
/// mesh and the midpoint map created for it.
fn loop_positions(
    coarse_pos: &[Vec3],
    coarse_faces: &[[usize; 3]],
    mids: &HashMap<(usize, usize), usize>,
    total_vertices: usize,
) -> Vec<Vec3> {
    let mut opposite: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); coarse_pos.len()];
    for f in coarse_faces {
        for k in 0..3 {
            let (a, b, c) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            opposite.entry(edge_key(a, b)).or_default().push(c);
            neighbors[a].push(b);
            neighbors[a].push(c);
        }
    }
    let mut boundary_nbrs: Vec<Vec<usize>> = vec![Vec::new(); coarse_pos.len()];
    for (&(a, b), opp) in &opposite {
        if opp.len() == 1 {
            boundary_nbrs[a].push(b);
            boundary_nbrs[b].push(a);
        }
    }
    let mut out = vec![Vec3::zeros(); total_vertices];
    for (v, nbrs) in neighbors.iter_mut().enumerate() {
        nbrs.sort_unstable();
        nbrs.dedup();
        let p = coarse_pos[v];
        out[v] = if boundary_nbrs[v].len() == 2 {
            let (x, y) = (boundary_nbrs[v][0], boundary_nbrs[v][1]);
            p * 0.75 + (coarse_pos[x] + coarse_pos[y]) * 0.125
        } else if nbrs.is_empty() {
            p
        } else {
            let n = nbrs.len() as f64;
            let t = 0.375 + 0.25 * (2.0 * std::f64::consts::PI / n).cos();
            let beta = (0.625 - t * t) / n;
            let sum: Vec3 = nbrs.iter().map(|&u| coarse_pos[u]).sum();
            p * (1.0 - n * beta) + sum * beta
        };
    }
    for (&(a, b), &m) in mids {
        let opp = &opposite[&(a, b)];
        out[m] = if opp.len() == 2 {
            (coarse_pos[a] + coarse_pos[b]) * 0.375 + (coarse_pos[opp[0]] + coarse_pos[opp[1]]) * 0.125
        } else {
            (coarse_pos[a] + coarse_pos[b]) * 0.5
        };
    }
    out
}

/// Applies `levels` rounds of 1-to-4 splitting. Every input face becomes one patch.
pub fn subdivide(mesh: &Mesh, levels: u32) -> Result<RemeshedMesh, RemeshError> {
    subdivide_with(mesh, levels, false)
}

/// As [`subdivide`], optionally repositioning vertices with Loop smoothing.
pub fn subdivide_with(mesh: &Mesh, levels: u32, smooth: bool) -> Result<RemeshedMesh, RemeshError> {
    if levels > MAX_LEVELS {
        return Err(RemeshError::LevelsTooDeep(levels));
    }
    let base_faces = mesh.face_count();
    let mut pos = mesh.vertices().to_vec();
    // Faces stay grouped patch-major, each group in canonical order.
    let mut faces = mesh.faces().to_vec();
    for _ in 0..levels {
        let mut mids: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 2);
        let mut next = Vec::with_capacity(faces.len() * 4);
        let coarse_len = pos.len();
        let mut mid = |a: usize, b: usize, pos: &mut Vec<Vec3>| {
            *mids.entry(edge_key(a, b)).or_insert_with(|| {
                pos.push((pos[a] + pos[b]) * 0.5);
                pos.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut pos);
            let bc = mid(b, c, &mut pos);
            let ca = mid(c, a, &mut pos);
            next.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        if smooth {
            pos = loop_positions(&pos[..coarse_len], &faces, &mids, pos.len());
        }
        faces = next;
    }

    let fpp = faces_per_patch(levels);
    let refined = Mesh::new(pos, faces)?;
    let mut patch_faces = Vec::with_capacity(base_faces);
    let mut patch_vertices = Vec::with_capacity(base_faces);
    let mut patch_centers = Vec::with_capacity(base_faces);
    for p in 0..base_faces {
        let ids: Vec<usize> = (p * fpp..(p + 1) * fpp).collect();
        let mut verts = Vec::with_capacity(vertices_per_patch(levels));
        for &f in &ids {
            for &v in &refined.faces()[f] {
                if !verts.contains(&v) {
                    verts.push(v);
                }
            }
        }
        let center = ids.iter().map(|&f| refined.face_centroid(f)).sum::<Vec3>() / fpp as f64;
        patch_faces.push(ids);
        patch_vertices.push(verts);
        patch_centers.push(center);
    }
    let patch_map = PatchMap { levels, patch_faces, patch_vertices, patch_centers };
    Ok(RemeshedMesh {
        mesh: refined,
        patch_map,
        config: RemeshConfig { base_faces, subdivision_levels: levels, smooth },
    })
}
