use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::generate::{generate_case_with, Resolution};
use super::{CaseSpec, Location, SynthError, DIAMETER_RANGE, HEIGHT_RANGE, SYSTEMS, TRANSGINGIVAL_RANGE};
use crate::mesh::write_obj;
use crate::model::AbutmentParams;
use crate::seed::derive_seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: usize,
    #[serde(flatten)]
    pub case: CaseSpec,
    pub split: Split,
    /// Mesh file relative to the manifest directory, once written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    seed: u64,
    split_fraction: f64,
    count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub split_fraction: f64,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn split(&self, which: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == which)
    }

    pub fn count(&self, which: Split) -> usize {
        self.split(which).count()
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            version: MANIFEST_VERSION,
            seed: self.seed,
            split_fraction: self.split_fraction,
            count: self.records.len(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, SynthError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(SynthError::Manifest { line: 1, msg: "empty manifest".into() })?;
        let header: Header =
            serde_json::from_str(first).map_err(|e| SynthError::Manifest { line: 1, msg: e.to_string() })?;
        if header.version != MANIFEST_VERSION {
            return Err(SynthError::Manifest { line: 1, msg: format!("unsupported version {}", header.version) });
        }
        let records = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| SynthError::Manifest { line: i + 1, msg: e.to_string() }))
            .collect::<Result<Vec<ManifestRecord>, _>>()?;
        if records.len() != header.count {
            return Err(SynthError::Manifest {
                line: 1,
                msg: format!("header count {} but {} records", header.count, records.len()),
            });
        }
        Ok(Self { seed: header.seed, split_fraction: header.split_fraction, records })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetOptions {
    pub noise: f64,
    pub resolution: Resolution,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self { noise: 0.5, resolution: Resolution::default() }
    }
}

/// One stratum per sample, visited in random order, per parameter.
fn latin_hypercube(rng: &mut ChaCha8Rng, n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    let mut strata: Vec<usize> = (0..n).collect();
    strata.shuffle(rng);
    strata.into_iter().map(|k| lo + (hi - lo) * (k as f64 + rng.random::<f64>()) / n as f64).collect()
}

pub fn build_dataset(n: usize, split: f64, seed: u64) -> Result<DatasetManifest, SynthError> {
    build_dataset_with(n, split, seed, &DatasetOptions::default())
}

/// Samples `n` cases and splits every category so its train share is within
/// one sample of `split`, with the overall train count `round(split * n)`.
pub fn build_dataset_with(
    n: usize,
    split: f64,
    seed: u64,
    opts: &DatasetOptions,
) -> Result<DatasetManifest, SynthError> {
    if n < 20 {
        return Err(SynthError::TooSmall(n));
    }
    if !(0.0..=1.0).contains(&split) {
        return Err(SynthError::Split(split));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5eed]));
    let tg = latin_hypercube(&mut rng, n, TRANSGINGIVAL_RANGE);
    let dia = latin_hypercube(&mut rng, n, DIAMETER_RANGE);
    let ht = latin_hypercube(&mut rng, n, HEIGHT_RANGE);
    let locations = Location::all();
    let mut records: Vec<ManifestRecord> = (0..n)
        .map(|i| {
            let loc = locations[rng.random_range(0..locations.len())];
            let system = SYSTEMS[rng.random_range(0..SYSTEMS.len())];
            let labels = AbutmentParams::new(tg[i], dia[i], ht[i]);
            ManifestRecord {
                id: i,
                case: CaseSpec::new(derive_seed(seed, &[i as u64]), labels, &loc.to_string(), system, opts.noise),
                split: Split::Test,
                mesh: None,
            }
        })
        .collect();

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in &records {
        groups.entry(r.case.category.clone()).or_default().push(r.id);
    }
    let target = (split * n as f64).round() as usize;
    let mut quotas: Vec<(String, usize, f64)> = groups
        .iter()
        .map(|(k, ids)| {
            let exact = split * ids.len() as f64;
            (k.clone(), exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &k in order.iter().take(target.saturating_sub(assigned)) {
        quotas[k].1 += 1;
    }
    for (key, quota, _) in &quotas {
        let mut ids = groups[key].clone();
        ids.shuffle(&mut rng);
        for &id in ids.iter().take(*quota) {
            records[id].split = Split::Train;
        }
    }
    Ok(DatasetManifest { seed, split_fraction: split, records })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Generates every mesh into `out_dir/meshes/<aa>/<sha256>.obj` and writes
/// the manifest. Returns the manifest with mesh paths filled in.
pub fn write_dataset(
    manifest: &DatasetManifest,
    out_dir: &Path,
    res: &Resolution,
) -> Result<DatasetManifest, SynthError> {
    let mut out = manifest.clone();
    for r in &mut out.records {
        let mesh = generate_case_with(&r.case, res)?;
        let text = write_obj(&mesh);
        let digest = hex(&Sha256::digest(text.as_bytes()));
        let rel = format!("meshes/{}/{}.obj", &digest[..2], digest);
        let path = out_dir.join(&rel);
        if !path.exists() {
            fs::create_dir_all(path.parent().expect("mesh dir"))?;
            fs::write(&path, text)?;
        }
        log::debug!("case {} -> {rel}", r.id);
        r.mesh = Some(rel);
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(MANIFEST_FILE), out.to_jsonl())?;
    Ok(out)
}

/// Reads a manifest; mesh paths are resolved against its directory.
pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf), SynthError> {
    let text = fs::read_to_string(path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((DatasetManifest::from_jsonl(&text)?, dir))
}

pub fn manifest_checksum(path: &Path) -> Result<String, SynthError> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}
