//! Patch-map sidecar: `PMAP` magic, `u32` version, `u32` base face count,
//! `u32` levels, then per patch the `4^K` face indices followed by the
//! distinct vertex indices, all little-endian `u32`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{faces_per_patch, vertices_per_patch, PatchMap, RemeshConfig, RemeshError, RemeshedMesh, MAX_LEVELS};
use crate::mesh::{load_mesh, save_mesh, Vec3};

const MAGIC: &[u8; 4] = b"PMAP";
const VERSION: u32 = 1;

fn put(w: &mut impl Write, v: usize) -> Result<(), RemeshError> {
    let v = u32::try_from(v).map_err(|_| RemeshError::Format(format!("index {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get(r: &mut impl Read) -> Result<u32, RemeshError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_patch_map(map: &PatchMap, w: &mut impl Write) -> Result<(), RemeshError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    put(w, map.patch_count())?;
    put(w, map.levels as usize)?;
    for (faces, verts) in map.patch_faces.iter().zip(&map.patch_vertices) {
        for &f in faces {
            put(w, f)?;
        }
        for &v in verts {
            put(w, v)?;
        }
    }
    Ok(())
}

/// Reads face and vertex index arrays; centers are left empty for the caller
/// to recompute from the mesh.
pub fn read_patch_map(r: &mut impl Read) -> Result<PatchMap, RemeshError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(RemeshError::Format("bad magic".into()));
    }
    let version = get(r)?;
    if version != VERSION {
        return Err(RemeshError::Format(format!("unsupported version {version}")));
    }
    let patches = get(r)? as usize;
    let levels = get(r)?;
    if levels > MAX_LEVELS {
        return Err(RemeshError::LevelsTooDeep(levels));
    }
    let (fpp, vpp) = (faces_per_patch(levels), vertices_per_patch(levels));
    let mut patch_faces = Vec::with_capacity(patches);
    let mut patch_vertices = Vec::with_capacity(patches);
    for _ in 0..patches {
        patch_faces.push((0..fpp).map(|_| get(r).map(|x| x as usize)).collect::<Result<Vec<_>, _>>()?);
        patch_vertices.push((0..vpp).map(|_| get(r).map(|x| x as usize)).collect::<Result<Vec<_>, _>>()?);
    }
    Ok(PatchMap { levels, patch_faces, patch_vertices, patch_centers: Vec::new() })
}

/// Writes the refined mesh and its `.pmap` sidecar.
pub fn save_remeshed(rm: &RemeshedMesh, mesh_path: &Path, map_path: &Path) -> Result<(), RemeshError> {
    save_mesh(&rm.mesh, mesh_path)?;
    let mut buf = Vec::new();
    write_patch_map(&rm.patch_map, &mut buf)?;
    fs::write(map_path, buf)?;
    Ok(())
}

pub fn load_remeshed(mesh_path: &Path, map_path: &Path) -> Result<RemeshedMesh, RemeshError> {
    let mesh = load_mesh(mesh_path)?;
    let bytes = fs::read(map_path)?;
    let mut map = read_patch_map(&mut bytes.as_slice())?;
    for faces in &map.patch_faces {
        if let Some(&bad) = faces.iter().find(|&&f| f >= mesh.face_count()) {
            return Err(RemeshError::Format(format!("face index {bad} out of range")));
        }
    }
    if map.patch_faces.len() * map.faces_per_patch() != mesh.face_count() {
        return Err(RemeshError::Format("patch map does not cover the mesh".into()));
    }
    map.patch_centers = map
        .patch_faces
        .iter()
        .map(|faces| faces.iter().map(|&f| mesh.face_centroid(f)).sum::<Vec3>() / faces.len() as f64)
        .collect();
    let config = RemeshConfig { base_faces: map.patch_count(), subdivision_levels: map.levels, smooth: false };
    Ok(RemeshedMesh { mesh, patch_map: map, config })
}
