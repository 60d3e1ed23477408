//! Procedural jaw ridge with one missing tooth.
//!
//! The ridge is a tube swept along a semicircular arch of radius `R` in the
//! z = 0 plane. Its cross-section is a superellipse whose top (the crest) sits
//! at z = 0 on the arch line. Teeth are superellipsoid height bumps on the
//! crest. One tooth slot is left empty:
//!
//! * the straight-line distance between the two facing tooth edges on the
//!   crest line equals `diameter`;
//! * the middle 60% of the gap dips below the crest by `transgingival`;
//! * both neighbouring teeth rise exactly `height` above the crest.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CaseSpec, Location, SynthError};
use crate::mesh::{Mesh, Vec3};
use crate::seed::derive_seed;

pub const TOOTH_WIDTH: f64 = 6.0;
pub const TOOTH_SPACING: f64 = 0.5;
/// Half-extent of a tooth bump across the ridge.
pub const TOOTH_DEPTH: f64 = 3.0;
/// Arc distance between adjacent gap slots when placing the gap by tooth number.
const SLOT_PITCH: f64 = 5.0;
const END_MARGIN: f64 = 3.0;
/// Knots placed this far inside each tooth edge keep the walls steep.
const EDGE_KNOT: f64 = 0.1;
/// Fraction of the gap occupied by the gingival dip.
const DIP_FRACTION: f64 = 0.6;
const DIP_HALF_WIDTH: f64 = 4.0;
const SUPER_P: f64 = 4.0;

/// Mesh density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolution {
    /// Vertices around each cross-section (even).
    pub ring: usize,
    /// Target knot spacing along the arch, mm.
    pub spacing: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        Self { ring: 40, spacing: 0.4 }
    }
}

/// Placement of the gap and teeth along the arch, arc-length coordinates on
/// the crest line (s = 0 at the +x end).
#[derive(Debug, Clone, PartialEq)]
pub struct CaseLayout {
    pub radius: f64,
    pub arch_length: f64,
    pub ridge_half_width: f64,
    pub ridge_half_height: f64,
    pub gap_center: f64,
    /// Arc length between the two facing tooth edges.
    pub gap_arc: f64,
    /// `(center, height above crest)` of every tooth; the first two are the gap neighbours.
    pub teeth: Vec<(f64, f64)>,
}

impl CaseLayout {
    pub fn crest_point(&self, s: f64) -> Vec3 {
        let t = s / self.radius;
        Vec3::new(self.radius * t.cos(), self.radius * t.sin(), 0.0)
    }

    pub fn gap_edges(&self) -> (f64, f64) {
        (self.gap_center - self.gap_arc / 2.0, self.gap_center + self.gap_arc / 2.0)
    }
}

fn gap_slot(loc: &Location) -> f64 {
    // Quadrants 1 and 4 lie on one side of the midline, 2 and 3 on the other.
    let side = if matches!(loc.quadrant, 1 | 4) { -1.0 } else { 1.0 };
    side * (loc.tooth as f64 - 0.5) * SLOT_PITCH
}

pub fn case_layout(spec: &CaseSpec) -> Result<CaseLayout, SynthError> {
    spec.validate()?;
    let loc: Location = spec.location.parse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1]));
    let radius = rng.random_range(30.0..34.0);
    let ridge_half_width = rng.random_range(4.5..5.5);
    let ridge_half_height = rng.random_range(5.5..6.5);
    let arch_length = PI * radius;
    let gap_center = arch_length / 2.0 + gap_slot(&loc);
    let gap_arc = 2.0 * radius * (spec.diameter / (2.0 * radius)).asin();

    let mut teeth = Vec::new();
    let (lo, hi) = (gap_center - gap_arc / 2.0, gap_center + gap_arc / 2.0);
    teeth.push((lo - TOOTH_WIDTH / 2.0, spec.height));
    teeth.push((hi + TOOTH_WIDTH / 2.0, spec.height));
    let pitch = TOOTH_WIDTH + TOOTH_SPACING;
    let mut c = lo - TOOTH_WIDTH / 2.0 - pitch;
    while c - TOOTH_WIDTH / 2.0 >= END_MARGIN {
        teeth.push((c, rng.random_range(4.0..10.0)));
        c -= pitch;
    }
    let mut c = hi + TOOTH_WIDTH / 2.0 + pitch;
    while c + TOOTH_WIDTH / 2.0 <= arch_length - END_MARGIN {
        teeth.push((c, rng.random_range(4.0..10.0)));
        c += pitch;
    }
    if teeth[0].0 - TOOTH_WIDTH / 2.0 < END_MARGIN || teeth[1].0 + TOOTH_WIDTH / 2.0 > arch_length - END_MARGIN {
        return Err(SynthError::Spec(format!("location {} leaves no room for neighbouring teeth", spec.location)));
    }
    Ok(CaseLayout { radius, arch_length, ridge_half_width, ridge_half_height, gap_center, gap_arc, teeth })
}

fn superellipse(phi: f64, a: f64, b: f64) -> (f64, f64) {
    let e = 2.0 / SUPER_P;
    let (c, s) = (phi.cos(), phi.sin());
    (a * c.signum() * c.abs().powf(e), -b + b * s.signum() * s.abs().powf(e))
}

/// Height of a tooth bump at arc offset `ds` and radial offset `dn`.
fn tooth_bump(ds: f64, dn: f64, height: f64) -> f64 {
    let us = (2.0 * ds / TOOTH_WIDTH).abs();
    let un = (dn / TOOTH_DEPTH).abs();
    let q = 1.0 - us.powf(SUPER_P) - un.powf(SUPER_P);
    if q <= 0.0 {
        0.0
    } else {
        height * q.powf(1.0 / SUPER_P)
    }
}

fn dip(layout: &CaseLayout, s: f64, dn: f64, depth: f64) -> f64 {
    let half = DIP_FRACTION * layout.gap_arc / 2.0;
    let u = (s - layout.gap_center) / half;
    if u.abs() >= 1.0 || dn.abs() >= DIP_HALF_WIDTH {
        return 0.0;
    }
    let along = 0.5 * (1.0 + (PI * u).cos());
    let across = (PI * dn / (2.0 * DIP_HALF_WIDTH)).cos().powi(2);
    depth * along * across
}

/// Arc positions of cross-sections: feature knots first, then a uniform fill
/// that keeps clear of them.
fn knots(layout: &CaseLayout, spacing: f64) -> Vec<f64> {
    let mut special = vec![layout.gap_center];
    let half_dip = DIP_FRACTION * layout.gap_arc / 2.0;
    special.extend([layout.gap_center - half_dip, layout.gap_center + half_dip]);
    for &(c, _) in &layout.teeth {
        let h = TOOTH_WIDTH / 2.0;
        special.extend([c - h, c - h + EDGE_KNOT, c, c + h - EDGE_KNOT, c + h]);
    }
    let mut all = special.clone();
    let n = (layout.arch_length / spacing).ceil() as usize;
    for i in 0..=n {
        let s = layout.arch_length * i as f64 / n as f64;
        if special.iter().all(|k| (k - s).abs() > spacing * 0.25) {
            all.push(s);
        }
    }
    all.sort_by(f64::total_cmp);
    all.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    all
}

/// Smooth random field from a few sinusoids.
struct Noise {
    terms: Vec<(f64, f64, f64, f64)>,
}

impl Noise {
    fn new(seed: u64, amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2]));
        let terms = (0..6)
            .map(|_| {
                (
                    amplitude * rng.random_range(0.2..1.0) / 6.0_f64.sqrt(),
                    rng.random_range(0.05..0.4),
                    rng.random_range(1.0_f64..4.0).floor(),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        Self { terms }
    }

    fn at(&self, s: f64, phi: f64) -> f64 {
        self.terms.iter().map(|(a, ks, kp, ph)| a * (ks * s + kp * phi + ph).sin()).sum()
    }
}

/// 0 around the gap and its neighbouring teeth, 1 far away.
fn noise_taper(layout: &CaseLayout, s: f64) -> f64 {
    let quiet = layout.gap_arc / 2.0 + TOOTH_WIDTH + 1.0;
    let d = (s - layout.gap_center).abs() - quiet;
    (d / 3.0).clamp(0.0, 1.0)
}

/// Builds the closed, outward-oriented ridge mesh for `spec`.
pub fn generate_case_with(spec: &CaseSpec, res: &Resolution) -> Result<Mesh, SynthError> {
    if res.ring < 8 || res.ring % 2 != 0 || !(res.spacing > 0.0) {
        return Err(SynthError::Spec("resolution needs an even ring of at least 8 and positive spacing".into()));
    }
    let layout = case_layout(spec)?;
    let ss = knots(&layout, res.spacing);
    let ring = res.ring;
    let noise = Noise::new(spec.seed, 0.3 * spec.noise);
    let (a, b) = (layout.ridge_half_width, layout.ridge_half_height);

    let mut vertices = Vec::with_capacity(ss.len() * ring + 2);
    for &s in &ss {
        let theta = s / layout.radius;
        let radial = Vec3::new(theta.cos(), theta.sin(), 0.0);
        let taper = noise_taper(&layout, s);
        for j in 0..ring {
            // j = ring/4 is the crest vertex.
            let phi = 2.0 * PI * j as f64 / ring as f64;
            let (n, mut z) = superellipse(phi, a, b);
            let n = if j == ring / 4 { 0.0 } else { n };
            if j == ring / 4 {
                z = 0.0;
            }
            if phi.sin() > 1e-12 {
                z += layout.teeth.iter().map(|&(c, h)| tooth_bump(s - c, n, h)).fold(0.0, f64::max);
                z -= dip(&layout, s, n, spec.transgingival);
            }
            let (mut n, mut z) = (n, z);
            if taper > 0.0 {
                let e = taper * noise.at(s, phi);
                n += e * phi.cos();
                z += e * phi.sin();
            }
            vertices.push(radial * (layout.radius + n) + Vec3::new(0.0, 0.0, z));
        }
    }
    let cap0 = vertices.len();
    let first: Vec3 = vertices[..ring].iter().sum::<Vec3>() / ring as f64;
    let last_start = (ss.len() - 1) * ring;
    let last: Vec3 = vertices[last_start..last_start + ring].iter().sum::<Vec3>() / ring as f64;
    vertices.push(first);
    vertices.push(last);

    let idx = |i: usize, j: usize| i * ring + (j % ring);
    let mut faces = Vec::with_capacity(2 * ss.len() * ring);
    for i in 0..ss.len() - 1 {
        for j in 0..ring {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    for j in 0..ring {
        faces.push([cap0, idx(0, j), idx(0, j + 1)]);
        faces.push([cap0 + 1, idx(ss.len() - 1, j + 1), idx(ss.len() - 1, j)]);
    }
    if signed_volume(&vertices, &faces) < 0.0 {
        for f in &mut faces {
            f.swap(1, 2);
        }
    }
    Ok(Mesh::new(vertices, faces)?)
}

pub fn generate_case(spec: &CaseSpec) -> Result<Mesh, SynthError> {
    generate_case_with(spec, &Resolution::default())
}

fn signed_volume(v: &[Vec3], faces: &[[usize; 3]]) -> f64 {
    faces.iter().map(|f| v[f[0]].dot(&v[f[1]].cross(&v[f[2]]))).sum::<f64>() / 6.0
}
