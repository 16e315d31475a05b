//! One function per subcommand. Each reads its declared inputs from the
//! output root, writes a stage directory and a manifest, and returns a
//! summary that `reproduce-synthetic` chains together.

mod cnn;
mod data;
mod features;
mod reproduce;

pub use cnn::{energy_report, evaluate, export_quantized, quantize, train_cnn, EvaluateSummary, TrainSummary};
pub use data::{ingest, synth_data, window, WindowSummary};
pub use features::{features, select, train_baseline};
pub use reproduce::{reproduce_synthetic, ReproduceSummary};

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::Serialize;
use sleeplite_core::windowing::read_windows;
use sleeplite_core::{ApneaClass, WindowSet};

use crate::config::Config;
use crate::manifest::{FileSet, Manifest, Versions, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION};

pub const DATA_DIR: &str = "data";
pub const WINDOWS_DIR: &str = "windows";
pub const FEATURES_DIR: &str = "features";
pub const SELECT_DIR: &str = "select";
pub const BASELINE_DIR: &str = "baseline";
pub const CNN_DIR: &str = "cnn";
pub const QUANT_DIR: &str = "quant";
pub const EVALUATE_DIR: &str = "evaluate";
pub const ENERGY_DIR: &str = "energy";
pub const EXPORT_DIR: &str = "export";
pub const REPRODUCE_DIR: &str = "reproduce";

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Resolved configuration plus the output root every stage works under.
pub struct Context {
    pub config: Config,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: Config, out: PathBuf) -> Self {
        Context { config, out }
    }

    pub fn stage(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Creates (or empties) a stage directory.
    pub fn fresh_stage(&self, name: &str) -> anyhow::Result<PathBuf> {
        let dir = self.stage(name);
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.config
            .data
            .dataset_dir
            .clone()
            .unwrap_or_else(|| self.stage(DATA_DIR))
    }

    pub fn windows_path(&self, split: &str) -> PathBuf {
        self.stage(WINDOWS_DIR).join(format!("{split}.slws"))
    }

    pub fn read_split(&self, split: &str) -> anyhow::Result<WindowSet> {
        let path = self.windows_path(split);
        read_windows(&path).with_context(|| format!("loading {split} windows (run `window` first)"))
    }

    /// Writes `manifest.json` into `dir`, hashing every other file there as
    /// an artifact.
    pub fn write_manifest(
        &self,
        command: &str,
        dir: &Path,
        inputs: &[PathBuf],
        summary: impl Serialize,
    ) -> anyhow::Result<Manifest> {
        let mut ins = FileSet::new(&self.out);
        for p in inputs {
            ins.add(p)?;
        }
        let mut outs = FileSet::new(&self.out);
        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            fs::remove_file(&manifest_path)?;
        }
        outs.add(dir)?;
        let m = Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            config_sha256: self.config.sha256(),
            seed: self.config.seed,
            versions: Versions::default(),
            inputs: ins.into_map(),
            artifacts: outs.into_map(),
            summary: serde_json::to_value(summary)?,
        };
        write_json(&manifest_path, &m)?;
        Ok(m)
    }

    pub fn seed(&self, stream: &str) -> u64 {
        sleeplite_core::rng::derive_seed(self.config.seed, stream)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Network inputs of a window set: each window's full span.
pub fn inputs(set: &WindowSet) -> Vec<&[f32]> {
    set.windows.iter().map(|w| w.samples.as_slice()).collect()
}

pub fn labels(set: &WindowSet) -> Vec<ApneaClass> {
    set.labels()
}
