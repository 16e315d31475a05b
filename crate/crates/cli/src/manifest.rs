//! Per-stage `manifest.json`: what produced the stage directory and the
//! SHA-256 of everything it read and wrote. No timestamps, so identical runs
//! give identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub sleeplite: String,
    pub window_container: u16,
    pub checkpoint: u16,
    pub quantized_model: u16,
    pub metrics: u32,
    pub energy_report: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            sleeplite: env!("CARGO_PKG_VERSION").to_string(),
            window_container: sleeplite_core::windowing::CONTAINER_VERSION,
            checkpoint: sleeplite_core::slcnn::CHECKPOINT_VERSION,
            quantized_model: sleeplite_core::quant::QUANT_VERSION,
            metrics: sleeplite_core::baseline::METRICS_SCHEMA_VERSION,
            energy_report: sleeplite_core::energy::ENERGY_SCHEMA_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub versions: Versions,
    /// Paths relative to the output root, mapped to their SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Collects file hashes for a manifest. Directories are walked recursively
/// in sorted order.
pub struct FileSet<'a> {
    root: &'a Path,
    files: BTreeMap<String, String>,
}

impl<'a> FileSet<'a> {
    pub fn new(root: &'a Path) -> Self {
        FileSet {
            root,
            files: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, path: &Path) -> anyhow::Result<()> {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(path)
                .with_context(|| format!("listing {}", path.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            entries.sort();
            for e in entries {
                self.add(&e)?;
            }
            return Ok(());
        }
        let key = path
            .strip_prefix(self.root)
            .unwrap_or(path)
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        self.files.insert(key, sha256_file(path)?);
        Ok(())
    }

    pub fn into_map(self) -> BTreeMap<String, String> {
        self.files
    }
}

impl Manifest {
    pub fn read(path: &Path) -> anyhow::Result<Manifest> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
