//! Run manifest: everything needed to reconstruct a run — the resolved
//! configuration, its hash, the seed, inputs, and produced artifacts.

use anyhow::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Fully resolved key=value settings; reruns parse this directly.
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_echo: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(config_echo.as_bytes());
        let config = config_echo
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Manifest {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: hex_digest(hasher),
            config,
            inputs: BTreeMap::new(),
            counts: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.to_string(), path.display().to_string());
    }

    pub fn count(&mut self, name: &str, value: u64) {
        self.counts.insert(name.to_string(), value);
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

fn hex_digest(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Fixed output layout: checkpoints/, metrics/, logs/, exports/.
pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["checkpoints", "metrics", "logs", "exports"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(OutDir {
            root: root.to_path_buf(),
        })
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    pub fn metric(&self, name: &str) -> PathBuf {
        self.root.join("metrics").join(name)
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(name)
    }

    pub fn export(&self, name: &str) -> PathBuf {
        self.root.join("exports").join(name)
    }
}
