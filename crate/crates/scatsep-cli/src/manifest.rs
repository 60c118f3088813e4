//! Run manifests: every subcommand emits one JSON manifest echoing its
//! full configuration, seeds, inputs, timings, and output hashes, so a run
//! can be reproduced from the manifest alone.

use serde::Serialize;
use std::path::Path;

#[derive(Serialize)]
pub struct OutputRecord {
    pub path: String,
    pub fnv1a64: String,
    pub bytes: usize,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<OutputRecord>,
    pub timings_ms: serde_json::Map<String, serde_json::Value>,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub details: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value) -> RunManifest {
        RunManifest {
            subcommand: subcommand.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_ms: serde_json::Map::new(),
            details: serde_json::Map::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn add_timing(&mut self, name: &str, ms: f64) {
        self.timings_ms
            .insert(name.to_string(), serde_json::json!(ms));
    }

    pub fn add_detail(&mut self, name: &str, value: serde_json::Value) {
        self.details.insert(name.to_string(), value);
    }

    /// Record an output file that already exists on disk.
    pub fn record_output(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.outputs.push(OutputRecord {
            path: path.display().to_string(),
            fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text)
    }
}

/// FNV-1a 64-bit content hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
