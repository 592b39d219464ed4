//! Run manifest: inputs with content hashes, config hash, versions, seed.

use anyhow::Result;
use serde_json::json;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use vista::config::PipelineConfig;

pub struct Manifest {
    pub command: String,
    pub inputs: Vec<(PathBuf, Option<String>)>,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(command: &str, inputs: &[PathBuf], cfg: &PipelineConfig) -> Self {
        Manifest {
            command: command.into(),
            inputs: inputs
                .iter()
                .map(|p| (p.clone(), std::fs::read(p).ok().map(|b| sha256_hex(&b))))
                .collect(),
            config_sha256: sha256_hex(cfg.to_toml().as_bytes()),
            seed: None,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let inputs: Vec<_> = self
            .inputs
            .iter()
            .map(|(p, h)| json!({ "path": p.to_string_lossy(), "sha256": h }))
            .collect();
        let body = json!({
            "command": self.command,
            "inputs": inputs,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
            "outputs": self.outputs,
            "versions": { "vista": env!("CARGO_PKG_VERSION") },
        });
        std::fs::write(path, serde_json::to_string_pretty(&body)? + "\n")?;
        Ok(())
    }
}
