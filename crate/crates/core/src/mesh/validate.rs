use std::collections::{BTreeMap, HashMap};

use super::{Mesh, DEGENERATE_AREA};

/// Manifold diagnostics. Nothing is repaired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    /// Every edge bounds one or two faces and every vertex star is a disk or half-disk.
    pub is_manifold: bool,
    pub boundary_edge_count: usize,
    /// Undirected edges `(lo, hi)` bounding more than two faces.
    pub non_manifold_edges: Vec<(usize, usize)>,
    /// Vertices whose incident faces do not form a single fan.
    pub non_manifold_vertices: Vec<usize>,
    pub degenerate_faces: Vec<usize>,
    /// Adjacent faces traverse every shared edge in opposite directions.
    pub orientation_consistent: bool,
    pub euler_characteristic: i64,
}

pub fn validate_manifold(mesh: &Mesh) -> ValidationReport {
    let faces = mesh.faces();
    let mut edges: BTreeMap<(usize, usize), Vec<(usize, bool)>> = BTreeMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            edges.entry((a.min(b), a.max(b))).or_default().push((fi, a < b));
        }
    }

    let mut boundary_edge_count = 0;
    let mut non_manifold_edges = Vec::new();
    let mut orientation_consistent = true;
    for (&e, incident) in &edges {
        match incident.len() {
            1 => boundary_edge_count += 1,
            2 => {
                if incident[0].1 == incident[1].1 {
                    orientation_consistent = false;
                }
            }
            _ => non_manifold_edges.push(e),
        }
    }

    let non_manifold_vertices = non_fan_vertices(mesh);
    let degenerate_faces = (0..faces.len()).filter(|&f| mesh.face_area(f) < DEGENERATE_AREA).collect();
    let euler_characteristic = mesh.vertex_count() as i64 - edges.len() as i64 + faces.len() as i64;

    ValidationReport {
        is_manifold: non_manifold_edges.is_empty() && non_manifold_vertices.is_empty(),
        boundary_edge_count,
        non_manifold_edges,
        non_manifold_vertices,
        degenerate_faces,
        orientation_consistent,
        euler_characteristic,
    }
}

/// A vertex star is a disk or half-disk iff its link (the opposite edges of
/// incident faces) is one connected path or cycle.
fn non_fan_vertices(mesh: &Mesh) -> Vec<usize> {
    let mut link: Vec<Vec<(usize, usize)>> = vec![Vec::new(); mesh.vertex_count()];
    for f in mesh.faces() {
        for k in 0..3 {
            link[f[k]].push((f[(k + 1) % 3], f[(k + 2) % 3]));
        }
    }
    let mut bad = Vec::new();
    for (v, edges) in link.iter().enumerate() {
        if edges.is_empty() {
            continue;
        }
        let mut degree: HashMap<usize, usize> = HashMap::new();
        let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
        for &(a, b) in edges {
            *degree.entry(a).or_default() += 1;
            *degree.entry(b).or_default() += 1;
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        let ends = degree.values().filter(|&&d| d == 1).count();
        let branchy = degree.values().any(|&d| d > 2);
        let start = *adj.keys().min().expect("non-empty link");
        let mut seen = vec![start];
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            for &y in &adj[&x] {
                if !seen.contains(&y) {
                    seen.push(y);
                    stack.push(y);
                }
            }
        }
        let connected = seen.len() == adj.len();
        if branchy || !connected || !(ends == 0 || ends == 2) {
            bad.push(v);
        }
    }
    bad
}
