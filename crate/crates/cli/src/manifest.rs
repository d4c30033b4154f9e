//! Per-run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use feedback_former::error::{Error, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub wall_clock_secs: f64,
    pub tool_version: String,
}

pub struct ManifestBuilder {
    command: String,
    config_digest: u64,
    seed: u64,
    artifacts: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config_digest: u64, seed: u64) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config_digest,
            seed,
            artifacts: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    /// Write `<out>/manifest.json`, or print one `manifest:` line without an
    /// output directory.
    pub fn emit(self, out: Option<&Path>) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            config_digest: format!("{:016x}", self.config_digest),
            seed: self.seed,
            artifacts: self.artifacts.iter().map(|p| p.display().to_string()).collect(),
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::internal(format!("manifest serialization failed: {e}")))?;
        match out {
            Some(dir) => {
                let path = dir.join("manifest.json");
                std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
            }
            None => println!("manifest: {}", serde_json::to_string(&manifest).unwrap_or_default()),
        }
        Ok(())
    }
}
