use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use moe_pathfinder::{json, Error, Result};
use serde::{Deserialize, Serialize};

/// Running record of a pipeline: where each stage wrote, and with which seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
    #[serde(default)]
    pub graphs: Vec<PathBuf>,
    #[serde(default)]
    pub pathsets: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruned_model: Option<PathBuf>,
    #[serde(default)]
    pub reports: Vec<PathBuf>,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
}

impl PipelineManifest {
    /// Loads `path` if present, checking that every file it names exists.
    pub fn open(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let m: Self = json::read(path)?;
        if let Some(missing) = m.referenced().find(|p| !p.exists()) {
            return Err(Error::io(
                missing,
                std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing"),
            ));
        }
        Ok(m)
    }

    fn referenced(&self) -> impl Iterator<Item = &PathBuf> {
        [&self.model, &self.data, &self.calibration, &self.mask, &self.pruned_model]
            .into_iter()
            .flatten()
            .chain(&self.graphs)
            .chain(&self.pathsets)
            .chain(&self.reports)
    }

    pub fn add_report(&mut self, path: &Path) {
        if !self.reports.iter().any(|p| p == path) {
            self.reports.push(path.to_path_buf());
        }
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        self.tool_version = env!("CARGO_PKG_VERSION").to_string();
        json::write_pretty(path, self)
    }
}
