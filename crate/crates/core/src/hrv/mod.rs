//! Heart-rate-variability features from single-lead ECG.
//!
//! [`detect_r_peaks`] finds beats, [`rr_series`] turns them into an NN
//! series, and the three feature families ([`time_features`],
//! [`freq_features`], [`nonlinear_features`]) reduce a series to named
//! values. [`extract_features`] applies the scheme-specific recipe to a whole
//! [`WindowSet`](crate::windowing::WindowSet).
//!
//! Degenerate inputs never produce NaN or infinity: the affected features are
//! set to 0 and a bit is raised in the vector's [`QualityFlags`].

mod extract;
mod filter;
mod freq;
mod nonlinear;
mod peaks;
mod stats;
mod time;

pub use extract::{extract_features, feature_names, window_features, FeatureTable};
pub use freq::{freq_features, welch_psd, FREQ_FEATURES, RESAMPLE_HZ};
pub use nonlinear::{nonlinear_features, NONLINEAR_FEATURES};
pub use peaks::detect_r_peaks;
pub use time::{time_features, HIST_BIN_MS, TIME_FEATURES};

use bitflags::bitflags;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accepted NN interval range, exclusive on both ends.
pub const MIN_INTERVAL_MS: f64 = 200.0;
pub const MAX_INTERVAL_MS: f64 = 4000.0;

bitflags! {
    /// Per-window record of which features fell back to the 0 sentinel.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
    pub struct QualityFlags: u32 {
        /// At least one interval outside (200, 4000) ms was dropped.
        const ARTIFACT_REJECTED = 1;
        /// Peak detection failed or left fewer than two intervals.
        const NO_BEATS = 1 << 1;
        /// Too few intervals for the time-domain family.
        const FEW_INTERVALS = 1 << 2;
        /// Record span below 60 s; spectral features not computed.
        const SHORT_SPAN = 1 << 3;
        /// Resampled series has no power in any band.
        const ZERO_POWER = 1 << 4;
        /// HF power is zero, so LF/HF and ln HF are sentinels.
        const ZERO_HF = 1 << 5;
        /// SD1 or SD2 is zero; Poincaré ratios are sentinels.
        const POINCARE_DEGENERATE = 1 << 6;
        /// No points off the identity line; asymmetry indices are sentinels.
        const ASYMMETRY_UNDEFINED = 1 << 7;
        /// Fewer than 32 intervals or a zero fluctuation for DFA.
        const DFA_UNDEFINED = 1 << 8;
        /// An entropy estimate has no matching templates or a zero tolerance.
        const ENTROPY_UNDEFINED = 1 << 9;
        /// Higuchi or Katz dimension undefined (flat series).
        const FRACTAL_UNDEFINED = 1 << 10;
        /// All intervals identical.
        const ZERO_VARIANCE = 1 << 11;
        /// Fewer than two monotone segments for fragmentation indices.
        const FRAGMENTATION_UNDEFINED = 1 << 12;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Time,
    Freq,
    Nonlinear,
}

/// Successive NN intervals.
///
/// `peak_times_s[i]` is the beat opening interval `i` and the final entry is
/// the beat closing the last interval. When an artifact interval is dropped
/// the next interval simply starts at its own opening beat, so the times are
/// a gapped series rather than a telescoping one.
#[derive(Debug, Clone, PartialEq)]
pub struct RrSeries {
    pub intervals_ms: Vec<f64>,
    pub peak_times_s: Vec<f64>,
    /// Duration of the ECG segment the series was taken from.
    pub record_span_s: f64,
    pub flags: QualityFlags,
}

impl RrSeries {
    /// Builds a contiguous series starting at t = 0; every interval must
    /// already lie inside the accepted range.
    pub fn from_intervals(intervals_ms: Vec<f64>) -> Result<Self> {
        if let Some(bad) = intervals_ms
            .iter()
            .find(|v| !(**v > MIN_INTERVAL_MS && **v < MAX_INTERVAL_MS))
        {
            return Err(Error::InvalidArgument(format!("interval {bad} ms outside (200, 4000)")));
        }
        let mut peak_times_s = Vec::with_capacity(intervals_ms.len() + 1);
        let mut t = 0.0;
        peak_times_s.push(t);
        for v in &intervals_ms {
            t += v / 1000.0;
            peak_times_s.push(t);
        }
        Ok(RrSeries {
            intervals_ms,
            record_span_s: t,
            peak_times_s,
            flags: QualityFlags::empty(),
        })
    }

    pub fn with_record_span(mut self, span_s: f64) -> Self {
        self.record_span_s = span_s;
        self
    }

    pub fn len(&self) -> usize {
        self.intervals_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals_ms.is_empty()
    }
}

/// NN series from R-peak indices, dropping intervals outside (200, 4000) ms.
pub fn rr_series(peaks: &[usize], fs: f64) -> Result<RrSeries> {
    if peaks.len() < 3 {
        return Err(Error::TooFewIntervals {
            needed: 2,
            got: peaks.len().saturating_sub(1),
        });
    }
    if !(fs > 0.0) {
        return Err(Error::InvalidSampleRate(fs));
    }
    let mut flags = QualityFlags::empty();
    let mut intervals_ms = Vec::with_capacity(peaks.len() - 1);
    let mut peak_times_s = Vec::with_capacity(peaks.len());
    for w in peaks.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidArgument("peak indices must be strictly increasing".into()));
        }
        let ms = (w[1] - w[0]) as f64 * 1000.0 / fs;
        if ms > MIN_INTERVAL_MS && ms < MAX_INTERVAL_MS {
            intervals_ms.push(ms);
            peak_times_s.push(w[0] as f64 / fs);
        } else {
            flags |= QualityFlags::ARTIFACT_REJECTED;
        }
    }
    if intervals_ms.len() < 2 {
        return Err(Error::TooFewIntervals {
            needed: 2,
            got: intervals_ms.len(),
        });
    }
    let last_open = *peak_times_s.last().unwrap();
    peak_times_s.push(last_open + intervals_ms.last().unwrap() / 1000.0);
    Ok(RrSeries {
        intervals_ms,
        peak_times_s,
        record_span_s: (peaks[peaks.len() - 1] - peaks[0]) as f64 / fs,
        flags,
    })
}

/// Named feature values in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub names: Vec<&'static str>,
    pub values: Vec<f64>,
    pub domains: Vec<Domain>,
    pub flags: QualityFlags,
}

impl FeatureVector {
    fn from_parts(names: &[&'static str], values: Vec<f64>, domain: Domain, flags: QualityFlags) -> Self {
        debug_assert_eq!(names.len(), values.len());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        FeatureVector {
            names: names.to_vec(),
            domains: vec![domain; names.len()],
            values,
            flags,
        }
    }

    pub(crate) fn sentinel(names: &[&'static str], domain: Domain, flags: QualityFlags) -> Self {
        Self::from_parts(names, vec![0.0; names.len()], domain, flags)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| *n == name).map(|i| self.values[i])
    }

    pub fn append(&mut self, other: FeatureVector) {
        self.names.extend(other.names);
        self.values.extend(other.values);
        self.domains.extend(other.domains);
        self.flags |= other.flags;
    }
}

/// Replaces a non-finite or flagged value by the sentinel.
pub(crate) fn guarded(value: f64, flags: &mut QualityFlags, flag: QualityFlags) -> f64 {
    if value.is_finite() {
        value
    } else {
        *flags |= flag;
        0.0
    }
}
