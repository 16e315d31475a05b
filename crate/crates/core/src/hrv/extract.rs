//! Scheme-specific feature recipes and the feature-matrix CSV.
//!
//! | scheme | time (18) | freq (7) + nonlinear (35) |
//! |---|---|---|
//! | WIN11 | 11 s segment | – |
//! | WIN61 | 61 s segment | 61 s segment |
//! | WINMIX | 11 s segment | 61 s segment |
//!
//! CSV layout: a header row of feature names followed by `label` (class name)
//! and `quality_flags` (decimal bit set), then one row per window.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use super::{
    detect_r_peaks, freq_features, nonlinear_features, rr_series, time_features, Domain, FeatureVector,
    QualityFlags, FREQ_FEATURES, NONLINEAR_FEATURES, TIME_FEATURES,
};
use crate::class::ApneaClass;
use crate::error::{Error, Result};
use crate::windowing::{Scheme, Window, WindowSet};

pub fn feature_names(scheme: Scheme) -> Vec<&'static str> {
    let mut names = TIME_FEATURES.to_vec();
    if scheme.has_long() {
        names.extend(FREQ_FEATURES);
        names.extend(NONLINEAR_FEATURES);
    }
    names
}

fn series(samples: &[f32], fs: f64) -> Result<super::RrSeries> {
    let ecg: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
    let peaks = detect_r_peaks(&ecg, fs)?;
    Ok(rr_series(&peaks, fs)?.with_record_span(samples.len() as f64 / fs))
}

fn time_part(samples: &[f32], fs: f64) -> FeatureVector {
    match series(samples, fs) {
        Ok(rr) => time_features(&rr)
            .unwrap_or_else(|_| FeatureVector::sentinel(&TIME_FEATURES, Domain::Time, rr.flags | QualityFlags::FEW_INTERVALS)),
        Err(_) => FeatureVector::sentinel(&TIME_FEATURES, Domain::Time, QualityFlags::NO_BEATS),
    }
}

fn long_parts(samples: &[f32], fs: f64) -> (FeatureVector, FeatureVector) {
    let rr = match series(samples, fs) {
        Ok(rr) => rr,
        Err(_) => {
            return (
                FeatureVector::sentinel(&FREQ_FEATURES, Domain::Freq, QualityFlags::NO_BEATS),
                FeatureVector::sentinel(&NONLINEAR_FEATURES, Domain::Nonlinear, QualityFlags::NO_BEATS),
            )
        }
    };
    let freq = freq_features(&rr).unwrap_or_else(|_| {
        FeatureVector::sentinel(&FREQ_FEATURES, Domain::Freq, rr.flags | QualityFlags::SHORT_SPAN)
    });
    let nonlinear = nonlinear_features(&rr).unwrap_or_else(|_| {
        FeatureVector::sentinel(&NONLINEAR_FEATURES, Domain::Nonlinear, rr.flags | QualityFlags::FEW_INTERVALS)
    });
    (freq, nonlinear)
}

/// Features of one window; never fails, degenerate parts become flagged
/// sentinels.
pub fn window_features(window: &Window) -> FeatureVector {
    let fs = window.sample_rate_hz as f64;
    let mut out = match window.scheme {
        Scheme::Win11 | Scheme::WinMix => time_part(window.samples_short().unwrap(), fs),
        Scheme::Win61 => time_part(&window.samples, fs),
    };
    if let Some(long) = window.samples_long() {
        let (freq, nonlinear) = long_parts(long, fs);
        out.append(freq);
        out.append(nonlinear);
    }
    out
}

/// Feature matrix for a window set, rows in window order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<ApneaClass>,
    pub flags: Vec<QualityFlags>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            names: self.names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            flags: indices.iter().map(|&i| self.flags[i]).collect(),
        }
    }

    pub fn select_columns(&self, columns: &[usize]) -> FeatureTable {
        FeatureTable {
            names: columns.iter().map(|&c| self.names[c].clone()).collect(),
            rows: self.rows.iter().map(|r| columns.iter().map(|&c| r[c]).collect()).collect(),
            labels: self.labels.clone(),
            flags: self.flags.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        header.extend(["label", "quality_flags"]);
        w.write_record(&header)?;
        for ((row, label), flags) in self.rows.iter().zip(&self.labels).zip(&self.flags) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(label.name().to_string());
            rec.push(flags.bits().to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<feature csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<FeatureTable> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3 || header[header.len() - 2] != "label" || header[header.len() - 1] != "quality_flags" {
            return Err(Error::InvalidArgument(
                "feature CSV must end with `label,quality_flags` columns".into(),
            ));
        }
        let nf = header.len() - 2;
        let mut table = FeatureTable {
            names: header[..nf].to_vec(),
            rows: Vec::new(),
            labels: Vec::new(),
            flags: Vec::new(),
        };
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::InvalidArgument(format!("feature CSV row {}: {what}", line + 2));
            let row = (0..nf)
                .map(|i| rec[i].trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| bad("non-numeric feature value"))?;
            table.rows.push(row);
            table.labels.push(rec[nf].parse().map_err(|_| bad("unknown label"))?);
            let bits: u32 = rec[nf + 1].trim().parse().map_err(|_| bad("bad quality_flags"))?;
            table.flags.push(QualityFlags::from_bits_truncate(bits));
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FeatureTable> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        FeatureTable::read_csv(std::io::BufReader::new(file))
    }
}

pub fn extract_features(set: &WindowSet) -> FeatureTable {
    let vectors: Vec<FeatureVector> = set.windows.par_iter().map(window_features).collect();
    FeatureTable {
        names: feature_names(set.scheme).into_iter().map(String::from).collect(),
        labels: set.labels(),
        flags: vectors.iter().map(|v| v.flags).collect(),
        rows: vectors.into_iter().map(|v| v.values).collect(),
    }
}
