//! Provenance records for produced artifacts.
//!
//! Artifacts embed only the manifest hash, which covers the command, its
//! resolved settings and the content of its inputs. Wall-clock data lives in
//! the side-car manifest file so reruns produce byte-identical artifacts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub settings: serde_json::Value,
    pub seeds: Vec<u64>,
    /// `(role, content hash)` of every input file.
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<String>,
    pub hash: String,
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

impl RunManifest {
    pub fn new(command: &str, settings: serde_json::Value, seeds: Vec<u64>, inputs: Vec<(String, String)>) -> Self {
        let hashed = serde_json::json!({
            "command": command,
            "settings": settings,
            "seeds": seeds,
            "inputs": inputs,
        });
        let hash = content_hash(hashed.to_string().as_bytes());
        let started_unix_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        Self { command: command.into(), settings, seeds, inputs, outputs: Vec::new(), hash, started_unix_ms, elapsed_ms: 0 }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serialises") + "\n")?;
        Ok(())
    }
}

/// Hex SHA-256 truncated to 16 bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..16])
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(content_hash(&std::fs::read(path)?))
}
