use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Provenance record every command leaves in its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub version: String,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, out_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().collect(),
            config_path: None,
            config_hash: None,
            seed: None,
            out_dir: out_dir.to_path_buf(),
            started_unix: unix_now(),
            finished_unix: 0,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Stamps the finish time and writes `run_manifest.json`.
    pub fn finish(mut self) -> Result<(), CliError> {
        self.finished_unix = unix_now();
        let path = self.out_dir.join(RUN_MANIFEST);
        let mut text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }
}
