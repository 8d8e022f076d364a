use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Record of one command run. `outputs_sha256` depends only on the output
/// files, so repeated runs of the same config and seed agree on it even
/// though the timestamps differ.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    pub config_sha256: Option<String>,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<OutputEntry>,
    pub outputs_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&[u8]>, seed: u64, started_unix: u64) -> Self {
        RunManifest {
            tool: "lgflow",
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            config_sha256: config.map(sha256_hex),
            seed,
            started_unix,
            finished_unix: 0,
            outputs: Vec::new(),
            outputs_sha256: String::new(),
        }
    }

    /// Hashes the given files (paths relative to `dir`), then writes
    /// `manifest-<command>.json` into `dir`.
    pub fn finish(mut self, dir: &Path, files: &[PathBuf]) -> Result<PathBuf, CliError> {
        let mut files: Vec<&PathBuf> = files.iter().collect();
        files.sort();
        files.dedup();
        let mut all = Sha256::new();
        for rel in files {
            let bytes = fs::read(dir.join(rel))?;
            let path = rel.to_string_lossy().replace('\\', "/");
            let sha = sha256_hex(&bytes);
            all.update(path.as_bytes());
            all.update([0u8]);
            all.update(sha.as_bytes());
            all.update(b"\n");
            self.outputs.push(OutputEntry { path, bytes: bytes.len() as u64, sha256: sha });
        }
        self.outputs_sha256 = hex::encode(all.finalize());
        self.finished_unix = unix_now();
        let out = dir.join(format!("manifest-{}.json", self.command));
        fs::write(&out, serde_json::to_string_pretty(&self).expect("manifest serializes"))?;
        Ok(out)
    }
}
