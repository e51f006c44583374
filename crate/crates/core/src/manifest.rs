//! Run manifests: a JSON record of everything a command resolved and produced.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em::TrainConfig;
use crate::embed::MetricReport;
use crate::error::{Error, Result};
use crate::geometry::GridGeometry;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub geometry: Option<GeometryRecord>,
    pub vocab_size: Option<usize>,
    pub config: Option<TrainConfig>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub final_bound: Option<f64>,
    pub metrics: Option<MetricReport>,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub dims: usize,
    pub extent: Vec<usize>,
    pub window: Vec<usize>,
    pub capacity: f64,
}

impl From<&GridGeometry> for GeometryRecord {
    fn from(g: &GridGeometry) -> Self {
        Self {
            dims: g.dims(),
            extent: g.extents().to_vec(),
            window: g.window().to_vec(),
            capacity: g.capacity(),
        }
    }
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            threads: rayon::current_num_threads(),
            ..Self::default()
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs
            .insert(name.to_string(), path.display().to_string());
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.outputs
            .insert(name.to_string(), path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }
}
