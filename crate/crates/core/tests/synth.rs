mod common;

use std::collections::BTreeMap;

use abutment_core::mesh::{validate_manifold, Mesh, Vec3};
use abutment_core::model::AbutmentParams;
use abutment_core::remesh::{remesh_pipeline, RemeshConfig};
use abutment_core::synth::{
    build_dataset, case_layout, generate_case, load_manifest, manifest_checksum, write_dataset, CaseSpec,
    DatasetManifest, Location, Resolution, Split, SynthError, SYSTEMS,
};
use rand::Rng;

fn spec(seed: u64, t: f64, d: f64, h: f64, loc: &str, noise: f64) -> CaseSpec {
    CaseSpec::new(seed, AbutmentParams::new(t, d, h), loc, "OSSTEM", noise)
}

fn random_spec(r: &mut impl Rng, noise: f64) -> CaseSpec {
    let locs = Location::all();
    let loc = locs[r.random_range(0..locs.len())].to_string();
    let mut s =
        spec(r.random(), r.random_range(1.0..5.0), r.random_range(3.5..7.0), r.random_range(4.0..10.0), &loc, noise);
    s.system = SYSTEMS[r.random_range(0..4)].to_string();
    s
}

/// Ray/triangle intersection distance along `dir`, if any.
fn ray_hit(o: &Vec3, dir: &Vec3, tri: [Vec3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let s = o - tri[0];
    let u = s.dot(&p) / det;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) / det;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&q) / det;
    (t > 1e-9).then_some(t)
}

fn first_hit(mesh: &Mesh, o: &Vec3, dir: &Vec3) -> Option<f64> {
    (0..mesh.face_count()).filter_map(|f| ray_hit(o, dir, mesh.corners(f))).min_by(f64::total_cmp)
}

/// Height of the top surface above the point on the crest line at arc `s`,
/// nudged just outward so the ray never runs along an edge.
fn surface_height(mesh: &Mesh, radius: f64, s: f64) -> f64 {
    let t = s / radius;
    let o = Vec3::new((radius + 1e-3) * t.cos(), (radius + 1e-3) * t.sin(), 50.0);
    50.0 - first_hit(mesh, &o, &Vec3::new(0.0, 0.0, -1.0)).expect("vertical ray hits the ridge")
}

#[test]
fn probed_geometry_matches_labels() {
    let mut r = common::rng(61);
    for _ in 0..50 {
        let spec = random_spec(&mut r, 0.0);
        let mesh = generate_case(&spec).unwrap();
        let lay = case_layout(&spec).unwrap();
        let (lo, hi) = lay.gap_edges();

        for side in [-1.0, 1.0] {
            let z = surface_height(&mesh, lay.radius, lay.gap_center + side * 0.35 * lay.gap_arc);
            assert!(z.abs() < 0.01, "crest beside the gap at {z}");
        }
        let floor = surface_height(&mesh, lay.radius, lay.gap_center);
        assert!((floor + spec.transgingival).abs() < 0.01, "gap floor {floor} for {}", spec.transgingival);
        for &(c, _) in &lay.teeth[..2] {
            let top = surface_height(&mesh, lay.radius, c);
            assert!((top - spec.height).abs() < 0.01, "neighbour top {top} for {}", spec.height);
        }

        let z = Vec3::new(0.0, 0.0, 0.05);
        let (a, b) = (lay.crest_point(lo) + z, lay.crest_point(hi) + z);
        let mid = (a + b) / 2.0;
        let ta = first_hit(&mesh, &mid, &(a - mid).normalize()).unwrap();
        let tb = first_hit(&mesh, &mid, &(b - mid).normalize()).unwrap();
        assert!((ta + tb - spec.diameter).abs() < 0.05, "gap width {} for {}", ta + tb, spec.diameter);
    }
}

#[test]
fn generated_cases_are_closed_manifolds_that_remesh() {
    let cases = [
        spec(1, 1.0, 3.5, 4.0, "Bottom-45", 0.0),
        spec(2, 5.0, 7.0, 10.0, "Top-11", 1.0),
        spec(3, 2.7, 5.1, 6.3, "Bottom-37", 0.5),
    ];
    for c in &cases {
        let mesh = generate_case(c).unwrap();
        let report = validate_manifold(&mesh);
        assert!(
            report.is_manifold && report.boundary_edge_count == 0 && report.orientation_consistent,
            "{}: {report:?}",
            c.location
        );
        let rm = remesh_pipeline(&mesh, &RemeshConfig::default()).unwrap();
        assert_eq!(rm.mesh.face_count(), 500 * 64);
    }
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let a = spec(9, 3.0, 5.0, 7.0, "Top-24", 0.7);
    assert_eq!(generate_case(&a).unwrap(), generate_case(&a).unwrap());
    let b = CaseSpec { seed: 10, ..a.clone() };
    assert_ne!(generate_case(&a).unwrap().vertices(), generate_case(&b).unwrap().vertices());
}

#[test]
fn out_of_range_labels_are_rejected() {
    let mut s = spec(1, 3.0, 5.0, 7.0, "Top-24", 0.0);
    s.height = 12.0;
    assert!(matches!(generate_case(&s), Err(SynthError::Spec(_))));
    assert!(matches!(generate_case(&spec(1, 3.0, 5.0, 7.0, "Top-38", 0.0)), Err(SynthError::Location(_))));
}

fn per_category(m: &DatasetManifest) -> BTreeMap<&str, (usize, usize)> {
    let mut out = BTreeMap::new();
    for r in &m.records {
        let e = out.entry(r.case.category.as_str()).or_insert((0, 0));
        e.0 += 1;
        e.1 += (r.split == Split::Train) as usize;
    }
    out
}

#[test]
fn stratified_split_counts() {
    let m = build_dataset(100, 0.85, 5).unwrap();
    assert_eq!((m.count(Split::Train), m.count(Split::Test)), (85, 15));
    for (cat, (n, train)) in per_category(&m) {
        assert!((train as f64 - 0.85 * n as f64).abs() <= 1.0, "{cat}: {train}/{n}");
    }
    for r in &m.records {
        r.case.validate().unwrap();
    }

    let all = build_dataset(40, 1.0, 5).unwrap();
    assert_eq!(all.count(Split::Test), 0);
    assert!(matches!(build_dataset(10, 0.85, 5), Err(SynthError::TooSmall(10))));
    assert!(matches!(build_dataset(30, 1.2, 5), Err(SynthError::Split(_))));
    assert_eq!(build_dataset(60, 0.85, 8).unwrap(), build_dataset(60, 0.85, 8).unwrap());
}

#[test]
fn manifest_round_trips_and_written_dataset_is_stable() {
    let m = build_dataset(20, 0.85, 3).unwrap();
    assert_eq!(DatasetManifest::from_jsonl(&m.to_jsonl()).unwrap(), m);

    let res = Resolution { ring: 12, spacing: 1.5 };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let w1 = write_dataset(&m, d1.path(), &res).unwrap();
    write_dataset(&m, d2.path(), &res).unwrap();
    let p1 = d1.path().join("manifest.jsonl");
    assert_eq!(manifest_checksum(&p1).unwrap(), manifest_checksum(&d2.path().join("manifest.jsonl")).unwrap());
    let (loaded, root) = load_manifest(&p1).unwrap();
    assert_eq!(loaded, w1);
    for r in &loaded.records {
        assert!(root.join(r.mesh.as_ref().unwrap()).is_file());
    }
}

#[test]
fn every_location_fits_the_widest_gap() {
    for seed in 0..40 {
        for loc in Location::all() {
            case_layout(&spec(seed, 3.0, 7.0, 10.0, &loc.to_string(), 0.0)).unwrap();
        }
    }
}
