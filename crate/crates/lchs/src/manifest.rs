//! Run manifests: every CLI invocation records its resolved configuration,
//! seed, tool version, wall time, and sha256 digests of what it wrote, so a
//! run can be reproduced and checked bit for bit (wall time aside).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tool_version: String,
    pub wall_time_ms: u64,
    /// Output file name -> sha256 hex digest; BTreeMap keeps the JSON stable.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_ms: 0,
            outputs: BTreeMap::new(),
        }
    }

    /// Digest `path` and record it under its file name.
    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.outputs.insert(name, file_digest(path)?);
        Ok(())
    }

    /// Write alongside the primary output as {out}.manifest.json.
    pub fn write_next_to(&self, primary_output: &Path) -> Result<std::path::PathBuf> {
        let mut name = primary_output.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = std::path::PathBuf::from(name);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(bytes_digest(&std::fs::read(path)?))
}
