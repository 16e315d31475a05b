//! Ingestion of ECG recordings and respiratory-event annotations, plus a
//! deterministic synthetic ECG generator for desk-scale experiments.

mod annotations;
mod dataset;
mod edf;
mod synth;

pub use annotations::{parse_annotations, write_annotations_csv, AnnotationFormat, RecordSpan};
pub use dataset::{load_subject, read_dataset, write_subject, SubjectData, ANNOTATIONS_FILE, RECORD_FILE};
pub use edf::{read_edf, read_edf_bytes, read_edf_header, write_edf, write_edf_bytes, EdfHeader, EdfSignalHeader};
pub use synth::{plan_events, synth_ecg, synth_ecg_with_truth, PlannedEvent, SynthConfig, SynthOutput, SynthPlan};

use serde::{Deserialize, Serialize};

use crate::class::EventKind;
use crate::error::{Error, Result};

/// Affine digital-to-physical map carried over from an EDF signal header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
}

impl Calibration {
    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    #[inline]
    pub fn to_physical(&self, digital: i16) -> f64 {
        self.physical_min + (digital as i32 - self.digital_min) as f64 * self.gain()
    }

    #[inline]
    pub fn to_digital(&self, physical: f64) -> i16 {
        let d = (physical - self.physical_min) / self.gain() + self.digital_min as f64;
        d.round()
            .clamp(self.digital_min as f64, self.digital_max as f64) as i16
    }

    /// Full 16-bit range spanning `[lo, hi]`.
    pub fn spanning(lo: f64, hi: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
        Calibration {
            physical_min: lo,
            physical_max: hi,
            digital_min: i16::MIN as i32,
            digital_max: i16::MAX as i32,
        }
    }
}

/// A uniformly sampled single-channel ECG in millivolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    /// Seconds since midnight of the first sample.
    pub start_time_s: f64,
    pub subject_id: String,
    /// Present when the record came from (or is destined for) a 16-bit container.
    pub calibration: Option<Calibration>,
}

impl EcgRecord {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, subject_id: impl Into<String>) -> Result<Self> {
        let rec = EcgRecord {
            samples,
            sample_rate_hz,
            start_time_s: 0.0,
            subject_id: subject_id.into(),
            calibration: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::InvalidRecord("sample rate must be positive".into()));
        }
        if self.samples.is_empty() {
            return Err(Error::InvalidRecord("record has no samples".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidRecord(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Number of complete seconds in the record.
    pub fn whole_seconds(&self) -> usize {
        self.samples.len() / self.sample_rate_hz as usize
    }
}

/// An annotated respiratory event, relative to the record start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RespEvent {
    pub onset_s: f64,
    pub duration_s: f64,
    pub kind: EventKind,
}

impl RespEvent {
    pub fn new(onset_s: f64, duration_s: f64, kind: EventKind) -> Result<Self> {
        if !(onset_s.is_finite() && onset_s >= 0.0) {
            return Err(Error::InvalidArgument(format!("event onset {onset_s} must be >= 0")));
        }
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "event duration {duration_s} must be positive"
            )));
        }
        Ok(RespEvent {
            onset_s,
            duration_s,
            kind,
        })
    }

    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }
}
