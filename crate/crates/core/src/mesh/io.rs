//! Wavefront-style ASCII triangle meshes: `v x y z` and `f i j k` lines with
//! 1-based indices. Normals, texture coordinates and grouping lines are
//! ignored on input; the writer emits only vertices then faces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Mesh, MeshError, Vec3};

pub fn parse_obj(text: &str) -> Result<Mesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut face_lines = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut parts = content.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        match tag {
            "v" => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| MeshError::Parse { line, msg: format!("bad vertex coordinate: {e}") })?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(MeshError::Parse { line, msg: "vertex needs three finite coordinates".into() });
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            "f" => {
                let idx: Vec<usize> = parts
                    .map(|s| {
                        let head = s.split('/').next().unwrap_or("");
                        head.parse::<usize>()
                            .ok()
                            .filter(|&i| i >= 1)
                            .map(|i| i - 1)
                            .ok_or_else(|| MeshError::Parse { line, msg: format!("bad face index `{s}`") })
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(MeshError::Parse {
                        line,
                        msg: format!("only triangles are supported, got {} indices", idx.len()),
                    });
                }
                faces.push([idx[0], idx[1], idx[2]]);
                face_lines.push(line);
            }
            "vn" | "vt" | "o" | "g" | "s" | "usemtl" | "mtllib" => {}
            other => return Err(MeshError::Parse { line, msg: format!("unknown directive `{other}`") }),
        }
    }
    for (f, line) in faces.iter().zip(face_lines) {
        if let Some(&i) = f.iter().find(|&&i| i >= vertices.len()) {
            return Err(MeshError::Parse {
                line,
                msg: format!("face index {} out of range for {} vertices", i + 1, vertices.len()),
            });
        }
    }
    Mesh::new(vertices, faces)
}

/// Canonical serialization. Coordinates use the shortest decimal form that
/// parses back to the same `f64`, so a reload is bit-exact.
pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(mesh.vertex_count() * 48 + mesh.face_count() * 24);
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn load_mesh(path: &Path) -> Result<Mesh, MeshError> {
    parse_obj(&fs::read_to_string(path)?)
}

pub fn save_mesh(mesh: &Mesh, path: &Path) -> Result<(), MeshError> {
    fs::write(path, write_obj(mesh))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn tetrahedron_counts_and_roundtrip() {
        let text = write_obj(&primitives::tetrahedron());
        let m = parse_obj(&text).unwrap();
        assert_eq!((m.vertex_count(), m.face_count()), (4, 4));
        assert_eq!(write_obj(&m), text);
    }

    #[test]
    fn index_out_of_range_is_reported() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 99\n";
        match parse_obj(text) {
            Err(MeshError::Parse { line: 5, msg }) => assert!(msg.contains("99")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn faceless_file_is_empty_error() {
        assert!(matches!(parse_obj("v 0 0 0\n"), Err(MeshError::Empty)));
    }

    #[test]
    fn rejects_quads_and_garbage() {
        let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        assert!(matches!(parse_obj(quad), Err(MeshError::Parse { line: 5, .. })));
        assert!(matches!(parse_obj("v 0 zero 0\n"), Err(MeshError::Parse { line: 1, .. })));
        assert!(matches!(parse_obj("f 0 1 2\n"), Err(MeshError::Parse { .. })));
    }

    #[test]
    fn accepts_slash_indices_and_comments() {
        let text = "# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n";
        assert_eq!(parse_obj(text).unwrap().face_count(), 1);
    }
}
