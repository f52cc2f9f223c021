//! Sidecar `manifest.json` recording grid and parameters of a flow directory.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use convflow::SpaceTimeGrid;
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";

/// Unit of the values stored in flow files.
pub const FLOW_UNITS: &str = "pixels per frame";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Frame spacing in units of the pixel spacing.
    pub dt: f64,
    pub units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Params>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub alpha1: f64,
    pub beta1: f64,
    pub beta0: f64,
    pub epsilon: f64,
    pub max_outer_iterations: usize,
    pub stabilization_tol: f64,
    pub cg_tolerance: f64,
    pub quadrature: usize,
    pub weighting: String,
}

impl Manifest {
    pub fn new(grid: &SpaceTimeGrid) -> Self {
        Self {
            frames: grid.frames(),
            height: grid.height(),
            width: grid.width(),
            dt: grid.dt(),
            units: FLOW_UNITS.to_string(),
            scenario: None,
            params: None,
            inputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
