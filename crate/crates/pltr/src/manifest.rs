//! Run manifests: every CLI command records what it read, what it wrote,
//! and the configuration that produced the outputs.
//!
//! The manifest is written next to the command's primary output as
//! `<output>.manifest.json`, so each artifact references the manifest that
//! produced it by location. Timestamps and wall time live only here; the
//! artifacts themselves stay byte-reproducible.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    /// Effective configuration after flag/file/default precedence.
    pub config: serde_json::Value,
    /// Input path -> sha256 hex digest.
    pub inputs: BTreeMap<String, String>,
    /// Output path -> sha256 hex digest.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_ms: u128,
    /// Seconds since the Unix epoch at completion.
    pub finished_at: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(sha256_hex(&bytes))
}

/// Collects digests during a command run and writes the manifest at the end.
pub struct ManifestBuilder {
    command: String,
    seed: u64,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started: std::time::Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: std::time::Instant::now(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), digest_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), digest_file(path)?);
        Ok(())
    }

    /// Write `<primary_output>.manifest.json` and return its path.
    pub fn write(self, primary_output: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_ms: self.started.elapsed().as_millis(),
            finished_at: SystemTime::now()
                .duration_since(SystemTime::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let mut name = primary_output
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "out".to_string());
        name.push_str(".manifest.json");
        let path = primary_output.with_file_name(name);
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(path)
    }
}
