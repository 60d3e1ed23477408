use serde::{Deserialize, Serialize};

/// The three abutment parameters, in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbutmentParams {
    /// Gingival thickness the abutment passes through.
    pub transgingival: f64,
    /// Width of the restoration space at the implant site.
    pub diameter: f64,
    /// Vertical clearance above the gingiva.
    pub height: f64,
}

impl AbutmentParams {
    pub const NAMES: [&'static str; 3] = ["transgingival", "diameter", "height"];

    pub fn new(transgingival: f64, diameter: f64, height: f64) -> Self {
        Self { transgingival, diameter, height }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.transgingival, self.diameter, self.height]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}
