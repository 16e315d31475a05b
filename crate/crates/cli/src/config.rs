//! Experiment configuration: a TOML file whose sections mirror the pipeline
//! stages. Every key is optional; unknown keys are rejected.
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//!
//! [windowing]
//! scheme = "WIN11"
//!
//! [cnn]
//! epochs = 50
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sleeplite_core::baseline::{LogRegConfig, SearchGrid, DEFAULT_K_LONG, DEFAULT_K_SHORT};
use sleeplite_core::signal_io::SynthPlan;
use sleeplite_core::slcnn::Optimizer;
use sleeplite_core::windowing::{SplitMode, SplitSpec, CLASSICAL_NORMAL_SHARE, CNN_NORMAL_SHARE};
use sleeplite_core::{Scheme, TopologyConfig, TrainConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// A problem with the configuration or the command line, reported with exit
/// code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub seed: u64,
    /// Output root; `--out` and `SLEEPLITE_OUT` take precedence.
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub synth: SynthPlan,
    pub windowing: WindowingConfig,
    pub undersample: UndersampleConfig,
    pub split: SplitConfig,
    pub pipeline: PipelineConfig,
    pub select: SelectConfig,
    pub baseline: BaselineConfig,
    pub cnn: CnnConfig,
    pub quant: QuantConfig,
    pub energy: EnergyConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            out_dir: None,
            data: DataConfig::default(),
            synth: SynthPlan::default(),
            windowing: WindowingConfig::default(),
            undersample: UndersampleConfig::default(),
            split: SplitConfig::default(),
            pipeline: PipelineConfig::default(),
            select: SelectConfig::default(),
            baseline: BaselineConfig::default(),
            cnn: CnnConfig::default(),
            quant: QuantConfig::default(),
            energy: EnergyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Canonical dataset read by `window`; defaults to `<out>/data`.
    pub dataset_dir: Option<PathBuf>,
    /// Raw UCDDB download read by `ingest`.
    pub ucddb_dir: Option<PathBuf>,
    /// EDF signal label of the ECG lead (case-insensitive).
    pub ecg_channel: String,
    pub annotation_format: String,
    /// Appended to a record's file stem to find its event listing.
    pub annotation_suffix: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset_dir: None,
            ucddb_dir: None,
            ecg_channel: "ECG".into(),
            annotation_format: "ucddb-text".into(),
            annotation_suffix: "_respevt.txt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowingConfig {
    pub scheme: String,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        WindowingConfig { scheme: "WIN11".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UndersampleConfig {
    pub enabled: bool,
    /// Normal share after undersampling; the pipeline's default when unset.
    pub normal_share: Option<f64>,
}

impl Default for UndersampleConfig {
    fn default() -> Self {
        UndersampleConfig {
            enabled: true,
            normal_share: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub test_frac: f64,
    pub val_frac_of_train: f64,
    pub mode: SplitMode,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSpec::default();
        SplitConfig {
            train_frac: s.train_frac,
            test_frac: s.test_frac,
            val_frac_of_train: s.val_frac_of_train,
            mode: s.mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    Classical,
    Cnn,
}

impl FromStr for PipelineKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "classical" => Ok(PipelineKind::Classical),
            "cnn" => Ok(PipelineKind::Cnn),
            other => Err(ConfigError(format!("unknown pipeline `{other}` (expected classical or cnn)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub kind: PipelineKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { kind: PipelineKind::Cnn }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    /// Features kept by RFE; 15 for WIN11 and 40 otherwise when unset.
    pub k: Option<usize>,
    pub logreg: LogRegConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub knn: bool,
    pub logreg: bool,
    pub grid: SearchGrid,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            knn: true,
            logreg: true,
            grid: SearchGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub conv_filters: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub pool_size: usize,
    pub dropout: f64,
    pub input_batchnorm: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub patience: usize,
    pub class_weighting: bool,
}

impl Default for CnnConfig {
    fn default() -> Self {
        let t = TopologyConfig::default();
        let r = TrainConfig::default();
        CnnConfig {
            conv_filters: t.conv_filters,
            conv_kernels: t.conv_kernels,
            pool_size: t.pool_size,
            dropout: t.dropout,
            input_batchnorm: t.input_batchnorm,
            epochs: r.epochs,
            batch_size: r.batch_size,
            learning_rate: r.learning_rate,
            optimizer: r.optimizer,
            momentum: r.momentum,
            patience: r.patience,
            class_weighting: r.class_weighting,
        }
    }
}

impl CnnConfig {
    pub fn topology(&self, input_len: usize) -> TopologyConfig {
        TopologyConfig {
            input_len,
            conv_filters: self.conv_filters.clone(),
            conv_kernels: self.conv_kernels.clone(),
            pool_size: self.pool_size,
            dropout: self.dropout,
            input_batchnorm: self.input_batchnorm,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            momentum: self.momentum,
            seed,
            patience: self.patience,
            class_weighting: self.class_weighting,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    pub enabled: bool,
    /// Training windows (the first ones, in container order) used to
    /// calibrate activation ranges.
    pub calibration_windows: usize,
    /// Fake-quantization fine-tuning epochs; 0 gives plain post-training
    /// quantization.
    pub qat_epochs: usize,
    pub qat_batch_size: usize,
    pub qat_learning_rate: f64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            enabled: true,
            calibration_windows: 1024,
            qat_epochs: 0,
            qat_batch_size: 64,
            qat_learning_rate: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// Cost table file; the built-in 45 nm table when unset.
    pub cost_table: Option<PathBuf>,
}

impl Config {
    pub fn parse(text: &str) -> anyhow::Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| config_error(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(config_error(format!(
                "config schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.scheme()?;
        self.data
            .annotation_format
            .parse::<sleeplite_core::signal_io::AnnotationFormat>()?;
        if let Some(s) = self.undersample.normal_share {
            if !(0.0..1.0).contains(&s) {
                return Err(config_error(format!("undersample.normal_share {s} outside [0, 1)")));
            }
        }
        self.split_spec().validate()?;
        self.cnn.train_config(0).validate()?;
        self.cnn.topology(1408).layers()?;
        Ok(())
    }

    pub fn scheme(&self) -> anyhow::Result<Scheme> {
        Ok(self.windowing.scheme.parse::<Scheme>()?)
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_frac: self.split.train_frac,
            test_frac: self.split.test_frac,
            val_frac_of_train: self.split.val_frac_of_train,
            seed: sleeplite_core::rng::derive_seed(self.seed, "split"),
            mode: self.split.mode,
        }
    }

    pub fn normal_share(&self) -> f64 {
        self.undersample.normal_share.unwrap_or(match self.pipeline.kind {
            PipelineKind::Classical => CLASSICAL_NORMAL_SHARE,
            PipelineKind::Cnn => CNN_NORMAL_SHARE,
        })
    }

    pub fn rfe_k(&self, scheme: Scheme) -> usize {
        self.select.k.unwrap_or(match scheme {
            Scheme::Win11 => DEFAULT_K_SHORT,
            Scheme::Win61 | Scheme::WinMix => DEFAULT_K_LONG,
        })
    }

    /// SHA-256 of the effective configuration; the output location is left
    /// out so that relocating a run does not change its identity.
    pub fn sha256(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let json = serde_json::to_string(&c).expect("config serialises");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
