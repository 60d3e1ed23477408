//! Labeled synthetic jaw scans and dataset manifests.

mod dataset;
mod generate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mesh::MeshError;
use crate::model::AbutmentParams;

pub use dataset::{
    build_dataset, build_dataset_with, load_manifest, manifest_checksum, write_dataset, DatasetManifest,
    DatasetOptions, ManifestRecord, Split, MANIFEST_FILE,
};
pub use generate::{
    case_layout, generate_case, generate_case_with, CaseLayout, Resolution, TOOTH_DEPTH, TOOTH_SPACING, TOOTH_WIDTH,
};

pub const TRANSGINGIVAL_RANGE: (f64, f64) = (1.0, 5.0);
pub const DIAMETER_RANGE: (f64, f64) = (3.5, 7.0);
pub const HEIGHT_RANGE: (f64, f64) = (4.0, 10.0);
/// Stock grid steps for transgingival, diameter and height.
pub const CATEGORY_STEPS: [f64; 3] = [1.0, 0.5, 1.0];

pub const SYSTEMS: [&str; 4] = ["OSSTEM", "SYSGEN", "DENTIUM", "NOBEL"];

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid case: {0}")]
    Spec(String),
    #[error("bad location `{0}` (expected Top-XY or Bottom-XY with FDI quadrant and tooth 1-7)")]
    Location(String),
    #[error("need at least 20 cases for a stratified split, got {0}")]
    TooSmall(usize),
    #[error("split fraction {0} outside [0, 1]")]
    Split(f64),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
}

/// FDI tooth position with arch prefix, e.g. `Bottom-45`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub quadrant: u8,
    pub tooth: u8,
}

impl Location {
    pub fn is_upper(&self) -> bool {
        matches!(self.quadrant, 1 | 2)
    }

    pub fn all() -> Vec<Location> {
        (1..=4).flat_map(|q| (1..=7).map(move |t| Location { quadrant: q, tooth: t })).collect()
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arch = if self.is_upper() { "Top" } else { "Bottom" };
        write!(f, "{arch}-{}{}", self.quadrant, self.tooth)
    }
}

impl FromStr for Location {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, SynthError> {
        let err = || SynthError::Location(s.to_string());
        let (arch, num) = s.split_once('-').ok_or_else(err)?;
        let digits: Vec<u8> = num.bytes().map(|b| b.wrapping_sub(b'0')).collect();
        if digits.len() != 2 || digits.iter().any(|d| *d > 9) {
            return Err(err());
        }
        let loc = Location { quadrant: digits[0], tooth: digits[1] };
        let arch_ok = match arch {
            "Top" => loc.is_upper(),
            "Bottom" => matches!(loc.quadrant, 3 | 4),
            _ => false,
        };
        if !arch_ok || !(1..=7).contains(&loc.tooth) {
            return Err(err());
        }
        Ok(loc)
    }
}

/// Implant series by restoration width: narrow, regular or wide platform.
pub fn series_for_diameter(diameter: f64) -> &'static str {
    if diameter < 4.5 {
        "N"
    } else if diameter < 5.75 {
        "R"
    } else {
        "W"
    }
}

/// Nearest stock size on the category grid, e.g. `T2-D4.5-H7`.
pub fn category_of(p: &AbutmentParams) -> String {
    let snap = |v: f64, lo: f64, hi: f64, step: f64| ((v.clamp(lo, hi) - lo) / step).round() * step + lo;
    let t = snap(p.transgingival, TRANSGINGIVAL_RANGE.0, TRANSGINGIVAL_RANGE.1, CATEGORY_STEPS[0]);
    let d = snap(p.diameter, DIAMETER_RANGE.0, DIAMETER_RANGE.1, CATEGORY_STEPS[1]);
    let h = snap(p.height, HEIGHT_RANGE.0, HEIGHT_RANGE.1, CATEGORY_STEPS[2]);
    format!("T{t}-D{d}-H{h}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub seed: u64,
    pub transgingival: f64,
    pub diameter: f64,
    pub height: f64,
    pub location: String,
    pub system: String,
    pub series: String,
    /// 0 gives an exact surface; 1 adds roughly 0.3 mm of smooth relief away from the gap.
    pub noise: f64,
    pub category: String,
}

impl CaseSpec {
    pub fn new(seed: u64, labels: AbutmentParams, location: &str, system: &str, noise: f64) -> Self {
        Self {
            seed,
            transgingival: labels.transgingival,
            diameter: labels.diameter,
            height: labels.height,
            location: location.to_string(),
            system: system.to_string(),
            series: series_for_diameter(labels.diameter).to_string(),
            noise,
            category: category_of(&labels),
        }
    }

    pub fn labels(&self) -> AbutmentParams {
        AbutmentParams::new(self.transgingival, self.diameter, self.height)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let check = |name: &str, v: f64, (lo, hi): (f64, f64)| {
            if v.is_finite() && v >= lo && v <= hi {
                Ok(())
            } else {
                Err(SynthError::Spec(format!("{name} {v} outside [{lo}, {hi}]")))
            }
        };
        check("transgingival", self.transgingival, TRANSGINGIVAL_RANGE)?;
        check("diameter", self.diameter, DIAMETER_RANGE)?;
        check("height", self.height, HEIGHT_RANGE)?;
        check("noise", self.noise, (0.0, 1.0))?;
        self.location.parse::<Location>()?;
        if self.category != category_of(&self.labels()) {
            return Err(SynthError::Spec(format!("category {} does not match labels", self.category)));
        }
        Ok(())
    }
}
