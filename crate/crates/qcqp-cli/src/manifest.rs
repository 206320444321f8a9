//! Run manifests: each file-writing command records its command line, input
//! digest, seeds, version, and output paths, and every output file carries
//! the manifest digest. Wall-clock time lives in the manifest but stays out
//! of the digest, so identical invocations produce byte-identical outputs.

use std::path::Path;
use std::time::Instant;

use serde_json::json;
use sha2::{Digest, Sha256};

pub struct ManifestBuilder {
    command_line: Vec<String>,
    inputs_digest: String,
    seed: Option<u64>,
    outputs: Vec<String>,
    started: Instant,
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

impl ManifestBuilder {
    pub fn new(inputs: &[&[u8]]) -> Self {
        let mut hasher = Sha256::new();
        for chunk in inputs {
            hasher.update((chunk.len() as u64).to_le_bytes());
            hasher.update(chunk);
        }
        Self {
            command_line: std::env::args().collect(),
            inputs_digest: format!("{:x}", hasher.finalize()),
            seed: None,
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn note_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Digest over the deterministic fields only.
    pub fn digest(&self) -> String {
        let deterministic = json!({
            "command_line": self.command_line,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "inputs_digest": self.inputs_digest,
            "outputs": self.outputs,
        });
        hex_digest(deterministic.to_string().as_bytes())
    }

    /// Full manifest document, including the wall clock.
    pub fn finish(&self) -> serde_json::Value {
        json!({
            "schema": "qcqp-manifest-v1",
            "command_line": self.command_line,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "inputs_digest": self.inputs_digest,
            "outputs": self.outputs,
            "digest": self.digest(),
            "wall_clock_secs": self.started.elapsed().as_secs_f64(),
        })
    }
}
