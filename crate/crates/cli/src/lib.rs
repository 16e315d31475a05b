//! Command-line driver for the sleeplite pipeline.
//!
//! Each subcommand is one pipeline stage working inside an output root:
//! it reads the artifacts of earlier stages, writes its own directory and a
//! `manifest.json`. Failures map to exit codes 1 (config), 2 (data) and
//! 3 (numeric), printed as a single `error: kind=… reason="…"` line.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sleeplite_core::ErrorCategory;

use crate::commands::Context;
use crate::config::{Config, ConfigError, PipelineKind};

pub const OUT_ENV: &str = "SLEEPLITE_OUT";
pub const DEFAULT_OUT: &str = "sleeplite-out";

#[derive(Debug, Parser)]
#[command(name = "sleeplite", version, about = "Sleep-apnea subtype classification from single-lead ECG")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root for every stage directory.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Experiment seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-subject dataset.
    SynthData {
        #[arg(long)]
        subjects: Option<usize>,
        /// Record length in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Convert a UCDDB download into the canonical dataset layout.
    Ingest {
        #[arg(long)]
        ucddb_dir: Option<PathBuf>,
    },
    /// Cut labelled windows, undersample Normal and split.
    Window(WindowArgs),
    /// Extract HRV features for every split.
    Features,
    /// Recursive feature elimination on the training features.
    Select {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Grid-search and fit the KNN and logistic-regression baselines.
    TrainBaseline,
    /// Train the CNN on raw windows.
    TrainCnn(TrainArgs),
    /// Calibrate and convert the trained CNN to int8.
    Quantize {
        /// Fake-quantization fine-tuning epochs (0 = post-training only).
        #[arg(long)]
        qat_epochs: Option<usize>,
    },
    /// Score every trained model on the test split.
    Evaluate,
    /// Energy per inference of the float and int8 networks.
    EnergyReport {
        #[arg(long)]
        cost_table: Option<PathBuf>,
    },
    /// Write the deployable int8 model and its resource report.
    ExportQuantized,
    /// Synthesize data and run the CNN pipeline end to end.
    ReproduceSynthetic {
        #[arg(long)]
        subjects: Option<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct WindowArgs {
    /// WIN11, WIN61 or WINMIX.
    #[arg(long)]
    pub scheme: Option<String>,
    /// classical or cnn; picks the default Normal share.
    #[arg(long)]
    pub pipeline: Option<String>,
    /// Keep every window.
    #[arg(long)]
    pub no_undersample: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut Config) {
        if let Some(v) = self.epochs {
            cfg.cnn.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.cnn.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.cnn.learning_rate = v;
        }
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthData { .. } => "synth-data",
            Command::Ingest { .. } => "ingest",
            Command::Window(_) => "window",
            Command::Features => "features",
            Command::Select { .. } => "select",
            Command::TrainBaseline => "train-baseline",
            Command::TrainCnn(_) => "train-cnn",
            Command::Quantize { .. } => "quantize",
            Command::Evaluate => "evaluate",
            Command::EnergyReport { .. } => "energy-report",
            Command::ExportQuantized => "export-quantized",
            Command::ReproduceSynthetic { .. } => "reproduce-synthetic",
        }
    }

    /// Folds command-line overrides into the configuration.
    fn apply(&self, cfg: &mut Config) -> anyhow::Result<()> {
        match self {
            Command::SynthData { subjects, duration } => {
                if let Some(v) = subjects {
                    cfg.synth.subjects = *v;
                }
                if let Some(v) = duration {
                    cfg.synth.duration_s = *v;
                }
            }
            Command::Ingest { ucddb_dir } => {
                if let Some(v) = ucddb_dir {
                    cfg.data.ucddb_dir = Some(v.clone());
                }
            }
            Command::Window(a) => {
                if let Some(v) = &a.scheme {
                    cfg.windowing.scheme = v.clone();
                }
                if let Some(v) = &a.pipeline {
                    cfg.pipeline.kind = v.parse::<PipelineKind>()?;
                }
                if a.no_undersample {
                    cfg.undersample.enabled = false;
                }
            }
            Command::Select { k } => {
                if k.is_some() {
                    cfg.select.k = *k;
                }
            }
            Command::TrainCnn(t) => t.apply(cfg),
            Command::Quantize { qat_epochs } => {
                if let Some(v) = qat_epochs {
                    cfg.quant.qat_epochs = *v;
                }
            }
            Command::EnergyReport { cost_table } => {
                if cost_table.is_some() {
                    cfg.energy.cost_table = cost_table.clone();
                }
            }
            Command::ReproduceSynthetic { subjects, train } => {
                if let Some(v) = subjects {
                    cfg.synth.subjects = *v;
                }
                train.apply(cfg);
            }
            Command::Features | Command::TrainBaseline | Command::Evaluate | Command::ExportQuantized => {}
        }
        Ok(())
    }
}

/// Resolves configuration and output root, then runs the command.
pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    cli.command.apply(&mut cfg)?;
    cfg.validate()?;
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(config::config_error("--threads must be at least 1"));
        }
        // a second initialisation in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = cli
        .global
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&out).map_err(|e| sleeplite_core::Error::io(&out, e))?;
    let mut ctx = Context::new(cfg, out);
    log::info!("{} -> {}", cli.command.name(), ctx.out.display());
    match &cli.command {
        Command::SynthData { .. } => commands::synth_data(&ctx),
        Command::Ingest { .. } => commands::ingest(&ctx),
        Command::Window(_) => commands::window(&ctx).map(drop),
        Command::Features => commands::features(&ctx),
        Command::Select { .. } => commands::select(&ctx),
        Command::TrainBaseline => commands::train_baseline(&ctx),
        Command::TrainCnn(_) => commands::train_cnn(&ctx).map(drop),
        Command::Quantize { .. } => commands::quantize(&ctx),
        Command::Evaluate => commands::evaluate(&ctx).map(drop),
        Command::EnergyReport { .. } => commands::energy_report(&ctx).map(drop),
        Command::ExportQuantized => commands::export_quantized(&ctx).map(drop),
        Command::ReproduceSynthetic { .. } => commands::reproduce_synthetic(&mut ctx).map(drop),
    }
}

/// Exit-code class of a failure, taken from the first typed error in the
/// chain.
pub fn classify(err: &anyhow::Error) -> ErrorCategory {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return ErrorCategory::Config;
        }
        if let Some(e) = cause.downcast_ref::<sleeplite_core::Error>() {
            return e.category();
        }
    }
    ErrorCategory::Data
}

pub fn exit_code(category: ErrorCategory) -> i32 {
    match category {
        ErrorCategory::Config => 1,
        ErrorCategory::Data => 2,
        ErrorCategory::Numeric => 3,
    }
}

/// The one-line, machine-parsable failure report.
pub fn error_line(err: &anyhow::Error) -> String {
    let kind = match classify(err) {
        ErrorCategory::Config => "config",
        ErrorCategory::Data => "data",
        ErrorCategory::Numeric => "numeric",
    };
    let reason = format!("{err:#}").replace('\n', " ");
    format!("error: kind={kind} reason={}", serde_json::to_string(&reason).expect("string serialises"))
}
