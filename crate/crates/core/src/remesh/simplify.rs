//! Quadric-error edge collapse down to an exact face budget.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, Matrix4, Vector4};

use super::RemeshError;
use crate::mesh::{validate_manifold, Mesh, Vec3};

/// Symmetric 4x4 plane-distance quadric.
#[derive(Debug, Clone, Copy)]
struct Quadric(Matrix4<f64>);

impl Quadric {
    fn zero() -> Self {
        Self(Matrix4::zeros())
    }

    fn plane(n: Vec3, d: f64, weight: f64) -> Self {
        let p = Vector4::new(n.x, n.y, n.z, d);
        Self(p * p.transpose() * weight)
    }

    fn add(&mut self, other: &Quadric) {
        self.0 += other.0;
    }

    fn error(&self, v: &Vec3) -> f64 {
        let h = Vector4::new(v.x, v.y, v.z, 1.0);
        (h.transpose() * self.0 * h)[0].max(0.0)
    }

    /// Minimizer of the quadric, when the 3x3 block is well conditioned.
    fn optimum(&self) -> Option<Vec3> {
        let a: Matrix3<f64> = self.0.fixed_view::<3, 3>(0, 0).into();
        let b = Vec3::new(self.0[(0, 3)], self.0[(1, 3)], self.0[(2, 3)]);
        let scale = a.norm();
        if scale == 0.0 || a.determinant().abs() < 1e-9 * scale * scale * scale {
            return None;
        }
        a.try_inverse().map(|inv| -(inv * b))
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    stamp_a: u32,
    stamp_b: u32,
    target: Vec3,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // Reversed so the max-heap pops the cheapest collapse; ties by vertex ids.
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.a.cmp(&self.a)).then_with(|| other.b.cmp(&self.b))
    }
}

/// Rejection thresholds for a collapse; relaxed if the budget is not reached.
#[derive(Debug, Clone, Copy)]
struct Strictness {
    min_normal_dot: f64,
    min_compactness: f64,
}

const STRICTNESS: [Strictness; 3] = [
    Strictness { min_normal_dot: 0.2, min_compactness: 0.08 },
    Strictness { min_normal_dot: 0.0, min_compactness: 0.01 },
    Strictness { min_normal_dot: -0.5, min_compactness: 1e-6 },
];

const BOUNDARY_WEIGHT: f64 = 100.0;

struct Collapser {
    pos: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vert_faces: Vec<Vec<usize>>,
    vert_alive: Vec<bool>,
    stamp: Vec<u32>,
    quadrics: Vec<Quadric>,
    alive_faces: usize,
    heap: BinaryHeap<Candidate>,
}

fn compactness(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let area2 = (b - a).cross(&(c - a)).norm();
    let l2 = (b - a).norm_squared() + (c - b).norm_squared() + (a - c).norm_squared();
    if l2 == 0.0 {
        return 0.0;
    }
    // 1 for an equilateral triangle.
    2.0 * 3f64.sqrt() * area2 / l2
}

impl Collapser {
    fn new(mesh: &Mesh) -> Self {
        let pos = mesh.vertices().to_vec();
        let faces = mesh.faces().to_vec();
        let mut vert_faces = vec![Vec::new(); pos.len()];
        let mut quadrics = vec![Quadric::zero(); pos.len()];
        for (fi, f) in faces.iter().enumerate() {
            let cross = mesh.face_cross(fi);
            let area = 0.5 * cross.norm();
            for &v in f {
                vert_faces[v].push(fi);
            }
            if area > 0.0 {
                let n = cross / cross.norm();
                let q = Quadric::plane(n, -n.dot(&pos[f[0]]), area);
                for &v in f {
                    quadrics[v].add(&q);
                }
            }
        }
        // Boundary edges get a perpendicular constraint plane.
        let mut edge_count: std::collections::HashMap<(usize, usize), (usize, usize)> = Default::default();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let e = edge_count.entry((a.min(b), a.max(b))).or_insert((0, fi));
                e.0 += 1;
            }
        }
        for (&(a, b), &(count, fi)) in &edge_count {
            if count == 1 {
                let n_face = mesh.face_cross(fi).normalize();
                let edge = pos[b] - pos[a];
                let n = edge.cross(&n_face);
                if n.norm() > 0.0 {
                    let n = n.normalize();
                    let q = Quadric::plane(n, -n.dot(&pos[a]), BOUNDARY_WEIGHT * edge.norm_squared());
                    quadrics[a].add(&q);
                    quadrics[b].add(&q);
                }
            }
        }
        let alive_faces = faces.len();
        let n = pos.len();
        Self {
            pos,
            faces,
            face_alive: vec![true; alive_faces],
            vert_faces,
            vert_alive: vec![true; n],
            stamp: vec![0; n],
            quadrics,
            alive_faces,
            heap: BinaryHeap::new(),
        }
    }

    fn live_faces_of(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.vert_faces[v].iter().copied().filter(|&f| self.face_alive[f])
    }

    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.live_faces_of(v).flat_map(|f| self.faces[f]).filter(|&u| u != v).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn is_boundary_edge_count(&self, a: usize, b: usize) -> usize {
        self.live_faces_of(a).filter(|&f| self.faces[f].contains(&b)).count()
    }

    fn is_boundary_vertex(&self, v: usize) -> bool {
        self.neighbors(v).into_iter().any(|u| self.is_boundary_edge_count(v, u) == 1)
    }

    fn push_candidate(&mut self, a: usize, b: usize) {
        let (a, b) = (a.min(b), a.max(b));
        let mut q = self.quadrics[a];
        q.add(&self.quadrics[b]);
        let (pa, pb) = (self.pos[a], self.pos[b]);
        let mid = (pa + pb) * 0.5;
        let len = (pb - pa).norm();
        let mut options = vec![pa, pb, mid];
        if let Some(opt) = q.optimum() {
            if (opt - mid).norm() <= len {
                options.insert(0, opt);
            }
        }
        let (target, cost) = options
            .into_iter()
            .map(|p| (p, q.error(&p)))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("non-empty options");
        self.heap.push(Candidate { cost, a, b, stamp_a: self.stamp[a], stamp_b: self.stamp[b], target });
    }

    fn seed_heap(&mut self) {
        self.heap.clear();
        let mut edges = Vec::new();
        for (fi, f) in self.faces.iter().enumerate() {
            if !self.face_alive[fi] {
                continue;
            }
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        for (a, b) in edges {
            self.push_candidate(a, b);
        }
    }

    /// Checks topology and geometry of collapsing `b` into `a` at `target`.
    fn collapse_allowed(&self, a: usize, b: usize, target: &Vec3, budget: usize, s: Strictness) -> bool {
        let shared: Vec<usize> = self.live_faces_of(a).filter(|&f| self.faces[f].contains(&b)).collect();
        if shared.is_empty() || self.alive_faces - shared.len() < budget {
            return false;
        }
        // Link condition: common neighbours are exactly the opposite corners of shared faces.
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        let common: Vec<usize> = na.iter().copied().filter(|u| nb.binary_search(u).is_ok()).collect();
        let mut opposite: Vec<usize> =
            shared.iter().flat_map(|&f| self.faces[f]).filter(|&u| u != a && u != b).collect();
        opposite.sort_unstable();
        opposite.dedup();
        if common != opposite {
            return false;
        }
        if shared.len() == 2 && self.is_boundary_vertex(a) && self.is_boundary_vertex(b) {
            return false;
        }
        // The two fans must not merge into a doubled-up sheet (tetrahedron case).
        if shared.len() == 2 && na.len() <= 3 && nb.len() <= 3 {
            return false;
        }
        for v in [a, b] {
            for f in self.live_faces_of(v) {
                if shared.contains(&f) {
                    continue;
                }
                let corners = self.faces[f];
                let old = [self.pos[corners[0]], self.pos[corners[1]], self.pos[corners[2]]];
                let mut new = old;
                for k in 0..3 {
                    if corners[k] == a || corners[k] == b {
                        new[k] = *target;
                    }
                }
                let n_old = (old[1] - old[0]).cross(&(old[2] - old[0]));
                let n_new = (new[1] - new[0]).cross(&(new[2] - new[0]));
                let (lo, ln) = (n_old.norm(), n_new.norm());
                if ln < 2e-8 || lo == 0.0 {
                    return false;
                }
                if n_old.dot(&n_new) / (lo * ln) < s.min_normal_dot {
                    return false;
                }
                if compactness(&new[0], &new[1], &new[2]) < s.min_compactness {
                    return false;
                }
            }
        }
        true
    }

    fn collapse(&mut self, a: usize, b: usize, target: Vec3) {
        let b_faces: Vec<usize> = self.live_faces_of(b).collect();
        for f in b_faces {
            if self.faces[f].contains(&a) {
                self.face_alive[f] = false;
                self.alive_faces -= 1;
            } else {
                for c in &mut self.faces[f] {
                    if *c == b {
                        *c = a;
                    }
                }
                self.vert_faces[a].push(f);
            }
        }
        self.vert_alive[b] = false;
        self.vert_faces[b].clear();
        let alive = &self.face_alive;
        self.vert_faces[a].retain(|&f| alive[f]);
        self.pos[a] = target;
        let qb = self.quadrics[b];
        self.quadrics[a].add(&qb);
        self.stamp[a] += 1;
        self.stamp[b] += 1;
        for u in self.neighbors(a) {
            self.push_candidate(a, u);
        }
    }

    fn run(&mut self, budget: usize, s: Strictness) {
        self.seed_heap();
        while self.alive_faces > budget {
            let Some(c) = self.heap.pop() else { break };
            if !self.vert_alive[c.a] || !self.vert_alive[c.b] {
                continue;
            }
            if self.stamp[c.a] != c.stamp_a || self.stamp[c.b] != c.stamp_b {
                continue;
            }
            if !self.collapse_allowed(c.a, c.b, &c.target, budget, s) {
                continue;
            }
            self.collapse(c.a, c.b, c.target);
        }
    }

    fn into_mesh(self) -> Result<Mesh, RemeshError> {
        let mut remap = vec![usize::MAX; self.pos.len()];
        let mut vertices = Vec::new();
        let mut faces = Vec::with_capacity(self.alive_faces);
        for (fi, f) in self.faces.iter().enumerate() {
            if !self.face_alive[fi] {
                continue;
            }
            let mut nf = [0; 3];
            for k in 0..3 {
                if remap[f[k]] == usize::MAX {
                    remap[f[k]] = vertices.len();
                    vertices.push(self.pos[f[k]]);
                }
                nf[k] = remap[f[k]];
            }
            faces.push(nf);
        }
        Ok(Mesh::new(vertices, faces)?)
    }
}

/// Reduces `mesh` to exactly `target_faces` faces by edge collapse.
pub fn simplify(mesh: &Mesh, target_faces: usize) -> Result<Mesh, RemeshError> {
    let report = validate_manifold(mesh);
    if !report.is_manifold {
        return Err(RemeshError::NonManifold {
            edges: report.non_manifold_edges,
            vertices: report.non_manifold_vertices,
        });
    }
    let have = mesh.face_count();
    if have < target_faces {
        return Err(RemeshError::TargetTooLarge { faces: have, target: target_faces });
    }
    if have == target_faces {
        return Ok(mesh.clone());
    }
    let mut c = Collapser::new(mesh);
    for s in STRICTNESS {
        c.run(target_faces, s);
        if c.alive_faces == target_faces {
            break;
        }
    }
    if c.alive_faces != target_faces {
        return Err(RemeshError::Unreachable { reached: c.alive_faces, target: target_faces });
    }
    c.into_mesh()
}
