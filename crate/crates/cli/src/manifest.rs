//! The `run-manifest` file written next to every run's outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const FILE_NAME: &str = "run-manifest";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    /// sha256 of each input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub version: &'static str,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, inputs: &[&Path]) -> Result<Self, CliError> {
        let mut digests = BTreeMap::new();
        for p in inputs {
            let bytes = std::fs::read(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            digests.insert(p.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        }
        Ok(Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config,
            inputs: digests,
            version: env!("CARGO_PKG_VERSION"),
            timestamp: chrono::Utc::now().to_rfc3339(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Internal(e.to_string()))?;
        crate::write_file(&dir.join(FILE_NAME), &(text + "\n"))
    }
}
