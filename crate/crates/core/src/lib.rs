//! Sleep-apnea subtype classification from single-lead ECG at one-second
//! label resolution, with int8 quantization and per-inference energy
//! accounting.
//!
//! The pipeline runs left to right through the modules:
//! [`signal_io`] → [`windowing`] → either [`hrv`] + [`baseline`] (classical
//! features) or [`slcnn`] (raw-window CNN) → [`quant`] → [`energy`].

pub mod baseline;
pub mod class;
pub mod hrv;
pub mod quant;
pub mod energy;
pub mod error;
pub mod rng;
pub mod signal_io;
pub mod slcnn;
pub mod windowing;

pub use class::{ApneaClass, EventKind, NUM_CLASSES};
pub use error::{Error, ErrorCategory, Result};
pub use hrv::{FeatureVector, QualityFlags, RrSeries};
pub use signal_io::{EcgRecord, RespEvent, SynthConfig};
pub use energy::{EnergyReport, OpCostTable, Precision};
pub use quant::{QuantParams, QuantizedNetwork};
pub use slcnn::{Network, TopologyConfig, TrainConfig};
pub use windowing::{Scheme, SecondLabels, Window, WindowSet};
