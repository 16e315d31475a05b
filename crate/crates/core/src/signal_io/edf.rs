//! Minimal EDF (version "0") reader and writer.
//!
//! Supported subset: contiguous data records, 16-bit little-endian samples,
//! no EDF+ annotation channel. Layout: a 256-byte main header, then 256 bytes
//! of per-signal header fields (stored field-major), then the data records.

use std::fs;
use std::path::Path;

use super::{Calibration, EcgRecord};
use crate::error::{Error, Result};

const MAIN_HEADER_LEN: usize = 256;
const SIGNAL_HEADER_LEN: usize = 256;

/// Per-signal header fields and their widths, in file order.
const SIGNAL_FIELDS: [(&str, usize); 10] = [
    ("label", 16),
    ("transducer", 80),
    ("physical dimension", 8),
    ("physical minimum", 8),
    ("physical maximum", 8),
    ("digital minimum", 8),
    ("digital maximum", 8),
    ("prefiltering", 80),
    ("samples per record", 8),
    ("reserved", 32),
];

#[derive(Debug, Clone, PartialEq)]
pub struct EdfSignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub calibration: Calibration,
    pub prefiltering: String,
    pub samples_per_record: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: usize,
    pub num_records: usize,
    pub record_duration_s: f64,
    pub signals: Vec<EdfSignalHeader>,
}

impl EdfHeader {
    /// Seconds since midnight encoded in the `hh.mm.ss` start-time field.
    pub fn start_seconds(&self) -> f64 {
        let parts: Vec<u32> = self
            .start_time
            .split(['.', ':'])
            .filter_map(|p| p.trim().parse().ok())
            .collect();
        match parts.as_slice() {
            [h, m, s] => (*h * 3600 + *m * 60 + *s) as f64,
            _ => 0.0,
        }
    }

    fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }
}

struct FieldReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> FieldReader<'a> {
    fn take(&mut self, width: usize, what: &str) -> Result<&'a str> {
        let end = self.pos + width;
        if end > self.bytes.len() {
            return Err(Error::EdfFormat {
                offset: self.pos as u64,
                reason: format!("header ends inside field `{what}`"),
            });
        }
        let raw = &self.bytes[self.pos..end];
        let s = std::str::from_utf8(raw).map_err(|_| Error::EdfFormat {
            offset: self.pos as u64,
            reason: format!("field `{what}` is not ASCII"),
        })?;
        self.pos = end;
        Ok(s.trim_end_matches(['\0', ' ']).trim_start())
    }

    fn number<T: std::str::FromStr>(&mut self, width: usize, what: &str) -> Result<T> {
        let offset = self.pos as u64;
        let s = self.take(width, what)?;
        s.trim().parse().map_err(|_| Error::EdfFormat {
            offset,
            reason: format!("field `{what}` is not a number: `{s}`"),
        })
    }
}

fn parse_header(bytes: &[u8]) -> Result<EdfHeader> {
    if bytes.len() < MAIN_HEADER_LEN {
        return Err(Error::EdfFormat {
            offset: bytes.len() as u64,
            reason: format!("main header needs {MAIN_HEADER_LEN} bytes"),
        });
    }
    let mut r = FieldReader { bytes, pos: 0 };
    let version = r.take(8, "version")?;
    if version != "0" {
        return Err(Error::EdfFormat {
            offset: 0,
            reason: format!("unsupported version `{version}`"),
        });
    }
    let patient = r.take(80, "patient")?.to_string();
    let recording = r.take(80, "recording")?.to_string();
    let start_date = r.take(8, "start date")?.to_string();
    let start_time = r.take(8, "start time")?.to_string();
    let header_offset = r.pos as u64;
    let header_bytes: usize = r.number(8, "header bytes")?;
    r.take(44, "reserved")?;
    let num_records: i64 = r.number(8, "number of records")?;
    let record_duration_s: f64 = r.number(8, "record duration")?;
    let ns: usize = r.number(4, "number of signals")?;

    if ns == 0 {
        return Err(Error::EdfFormat {
            offset: 252,
            reason: "file declares zero signals".into(),
        });
    }
    let expected = MAIN_HEADER_LEN + ns * SIGNAL_HEADER_LEN;
    if header_bytes != expected {
        return Err(Error::EdfFormat {
            offset: header_offset,
            reason: format!("header length {header_bytes} does not match {expected} for {ns} signals"),
        });
    }
    if bytes.len() < expected {
        return Err(Error::EdfFormat {
            offset: bytes.len() as u64,
            reason: format!("signal headers need {expected} bytes"),
        });
    }
    if num_records < 0 {
        return Err(Error::EdfFormat {
            offset: 236,
            reason: "unknown record count (-1) is not supported".into(),
        });
    }
    if !(record_duration_s > 0.0) {
        return Err(Error::EdfFormat {
            offset: 244,
            reason: format!("record duration {record_duration_s} must be positive"),
        });
    }

    // Field-major layout: all labels, then all transducers, ...
    let mut columns: Vec<Vec<(u64, String)>> = Vec::with_capacity(SIGNAL_FIELDS.len());
    for (name, width) in SIGNAL_FIELDS {
        let mut col = Vec::with_capacity(ns);
        for _ in 0..ns {
            let off = r.pos as u64;
            col.push((off, r.take(width, name)?.to_string()));
        }
        columns.push(col);
    }
    let num = |field: usize, i: usize| -> Result<f64> {
        let (off, s) = &columns[field][i];
        s.trim().parse().map_err(|_| Error::EdfFormat {
            offset: *off,
            reason: format!("field `{}` is not a number: `{s}`", SIGNAL_FIELDS[field].0),
        })
    };

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let calibration = Calibration {
            physical_min: num(3, i)?,
            physical_max: num(4, i)?,
            digital_min: num(5, i)? as i32,
            digital_max: num(6, i)? as i32,
        };
        if calibration.digital_max <= calibration.digital_min {
            return Err(Error::EdfFormat {
                offset: columns[6][i].0,
                reason: "digital maximum must exceed digital minimum".into(),
            });
        }
        let spr = num(8, i)?;
        if !(spr >= 1.0) {
            return Err(Error::EdfFormat {
                offset: columns[8][i].0,
                reason: "samples per record must be positive".into(),
            });
        }
        signals.push(EdfSignalHeader {
            label: columns[0][i].1.clone(),
            transducer: columns[1][i].1.clone(),
            physical_dimension: columns[2][i].1.clone(),
            calibration,
            prefiltering: columns[7][i].1.clone(),
            samples_per_record: spr as usize,
        });
    }

    Ok(EdfHeader {
        patient,
        recording,
        start_date,
        start_time,
        header_bytes,
        num_records: num_records as usize,
        record_duration_s,
        signals,
    })
}

/// Parses an in-memory EDF image and returns one channel as a record.
/// Header only; used to locate a channel by label before decoding it.
pub fn read_edf_header(bytes: &[u8]) -> Result<EdfHeader> {
    parse_header(bytes)
}

pub fn read_edf_bytes(bytes: &[u8], channel: usize) -> Result<(EdfHeader, EcgRecord)> {
    let header = parse_header(bytes)?;
    let sig = header.signals.get(channel).ok_or(Error::ChannelNotFound {
        index: channel,
        available: header.signals.len(),
    })?;

    let fs = sig.samples_per_record as f64 / header.record_duration_s;
    if (fs - fs.round()).abs() > 1e-9 || fs < 1.0 {
        return Err(Error::EdfFormat {
            offset: 244,
            reason: format!("non-integer sample rate {fs} Hz"),
        });
    }

    let record_bytes = header.record_bytes();
    let offset_in_record: usize = header.signals[..channel]
        .iter()
        .map(|s| s.samples_per_record * 2)
        .sum();
    let cal = sig.calibration;
    let spr = sig.samples_per_record;

    let mut samples = Vec::with_capacity(header.num_records * spr);
    for rec in 0..header.num_records {
        let start = header.header_bytes + rec * record_bytes;
        let end = start + record_bytes;
        if end > bytes.len() {
            return Err(Error::TruncatedRecord {
                record: rec,
                offset: start as u64,
            });
        }
        let chunk = &bytes[start + offset_in_record..start + offset_in_record + spr * 2];
        samples.extend(
            chunk
                .chunks_exact(2)
                .map(|b| cal.to_physical(i16::from_le_bytes([b[0], b[1]]))),
        );
    }

    let record = EcgRecord {
        samples,
        sample_rate_hz: fs.round() as u32,
        start_time_s: header.start_seconds(),
        subject_id: header.patient.split_whitespace().next().unwrap_or("").to_string(),
        calibration: Some(cal),
    };
    record.validate()?;
    Ok((header, record))
}

pub fn read_edf(path: impl AsRef<Path>, channel: usize) -> Result<EcgRecord> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_edf_bytes(&bytes, channel).map(|(_, rec)| rec)
}

/// Shortest decimal rendering that fits an 8-character header field.
fn fmt_field_number(x: f64) -> String {
    let s = format!("{x}");
    if s.len() <= 8 {
        return s;
    }
    for prec in (0..8).rev() {
        let s = format!("{x:.prec$}");
        if s.len() <= 8 {
            return s;
        }
    }
    format!("{x:.0}")
}

fn push_field(out: &mut Vec<u8>, s: &str, width: usize) {
    let mut b: Vec<u8> = s.bytes().filter(|c| c.is_ascii() && !c.is_ascii_control()).collect();
    b.truncate(width);
    b.resize(width, b' ');
    out.extend_from_slice(&b);
}

/// Serializes a record as a single-signal EDF image with 1-second data records.
///
/// Samples are converted with the record's calibration, or with a full-range
/// 16-bit calibration spanning the sample extrema when it has none.
pub fn write_edf_bytes(record: &EcgRecord) -> Result<Vec<u8>> {
    record.validate()?;
    let fs = record.sample_rate_hz as usize;
    let n = record.samples.len();
    let (spr, duration_field) = if n.is_multiple_of(fs) {
        (fs, "1".to_string())
    } else {
        let d = fmt_field_number(n as f64 / fs as f64);
        if d.parse::<f64>().ok() != Some(n as f64 / fs as f64) {
            return Err(Error::InvalidRecord(format!(
                "{n} samples at {fs} Hz cannot be laid out in EDF data records"
            )));
        }
        (n, d)
    };
    let num_records = n / spr;

    let cal = record.calibration.unwrap_or_else(|| {
        let (lo, hi) = record
            .samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        Calibration::spanning(lo, hi)
    });
    let fields = [
        fmt_field_number(cal.physical_min),
        fmt_field_number(cal.physical_max),
        cal.digital_min.to_string(),
        cal.digital_max.to_string(),
    ];
    // Convert with the calibration exactly as a reader will parse it back.
    let written = Calibration {
        physical_min: fields[0].parse().unwrap_or(cal.physical_min),
        physical_max: fields[1].parse().unwrap_or(cal.physical_max),
        digital_min: cal.digital_min,
        digital_max: cal.digital_max,
    };
    if !(written.physical_max > written.physical_min)
        || written.digital_min < i16::MIN as i32
        || written.digital_max > i16::MAX as i32
    {
        return Err(Error::InvalidRecord("calibration outside the 16-bit EDF subset".into()));
    }

    let secs = record.start_time_s.max(0.0).round() as u64 % 86_400;
    let start_time = format!("{:02}.{:02}.{:02}", secs / 3600, (secs / 60) % 60, secs % 60);

    let mut out = Vec::with_capacity(MAIN_HEADER_LEN + SIGNAL_HEADER_LEN + n * 2);
    push_field(&mut out, "0", 8);
    push_field(&mut out, &record.subject_id, 80);
    push_field(&mut out, "Startdate X X X X", 80);
    push_field(&mut out, "01.01.00", 8);
    push_field(&mut out, &start_time, 8);
    push_field(&mut out, &(MAIN_HEADER_LEN + SIGNAL_HEADER_LEN).to_string(), 8);
    push_field(&mut out, "", 44);
    push_field(&mut out, &num_records.to_string(), 8);
    push_field(&mut out, &duration_field, 8);
    push_field(&mut out, "1", 4);

    push_field(&mut out, "ECG", 16);
    push_field(&mut out, "", 80);
    push_field(&mut out, "mV", 8);
    for f in &fields {
        push_field(&mut out, f, 8);
    }
    push_field(&mut out, "", 80);
    push_field(&mut out, &spr.to_string(), 8);
    push_field(&mut out, "", 32);
    debug_assert_eq!(out.len(), MAIN_HEADER_LEN + SIGNAL_HEADER_LEN);

    for &x in &record.samples {
        out.extend_from_slice(&written.to_digital(x).to_le_bytes());
    }
    Ok(out)
}

pub fn write_edf(path: impl AsRef<Path>, record: &EcgRecord) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_edf_bytes(record)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full_range(lo: f64, hi: f64) -> Calibration {
        Calibration {
            physical_min: lo,
            physical_max: hi,
            digital_min: -32768,
            digital_max: 32767,
        }
    }

    fn record_from_digital(digital: &[i16], cal: Calibration, fs: u32) -> EcgRecord {
        EcgRecord {
            samples: digital.iter().map(|&d| cal.to_physical(d)).collect(),
            sample_rate_hz: fs,
            start_time_s: 3723.0,
            subject_id: "ucddb002".into(),
            calibration: Some(cal),
        }
    }

    #[test]
    fn scaling_of_digital_zero() {
        let cal = full_range(-1.0, 1.0);
        let expected = -1.0 + 32768.0 * 2.0 / 65535.0;
        assert_eq!(cal.to_physical(0), expected);
        assert!((cal.to_physical(0) - 1.5259e-5).abs() < 1e-8);
    }

    #[test]
    fn digital_min_maps_to_physical_min_exactly() {
        let cal = full_range(-3.2, 5.7);
        assert_eq!(cal.to_physical(i16::MIN), -3.2);
    }

    #[test]
    fn payload_round_trips_bit_exactly() {
        let digital: Vec<i16> = (0..512).map(|i| ((i * 977) % 65536 - 32768) as i16).collect();
        let rec = record_from_digital(&digital, full_range(-2.5, 2.5), 128);
        let bytes = write_edf_bytes(&rec).unwrap();
        let (header, back) = read_edf_bytes(&bytes, 0).unwrap();
        assert_eq!(header.num_records, 4);
        assert_eq!(back.sample_rate_hz, 128);
        assert_eq!(back.start_time_s, 3723.0);
        assert_eq!(back.subject_id, "ucddb002");
        let again = write_edf_bytes(&back).unwrap();
        assert_eq!(bytes, again);
        let payload: Vec<i16> = bytes[512..]
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]))
            .collect();
        assert_eq!(payload, digital);
    }

    #[test]
    fn selects_channel_from_multi_signal_file() {
        // Two signals, 2 samples per record each, 2 records.
        let mut out = Vec::new();
        push_field(&mut out, "0", 8);
        push_field(&mut out, "p", 80);
        push_field(&mut out, "r", 80);
        push_field(&mut out, "01.01.00", 8);
        push_field(&mut out, "00.00.00", 8);
        push_field(&mut out, "768", 8);
        push_field(&mut out, "", 44);
        push_field(&mut out, "2", 8);
        push_field(&mut out, "0.5", 8);
        push_field(&mut out, "2", 4);
        for (_, w) in SIGNAL_FIELDS.iter().take(3) {
            push_field(&mut out, "x", *w);
            push_field(&mut out, "x", *w);
        }
        for v in ["-32768", "-32768", "32767", "32767", "-32768", "-32768", "32767", "32767"] {
            push_field(&mut out, v, 8);
        }
        push_field(&mut out, "", 80);
        push_field(&mut out, "", 80);
        push_field(&mut out, "2", 8);
        push_field(&mut out, "2", 8);
        push_field(&mut out, "", 32);
        push_field(&mut out, "", 32);
        for v in [1i16, 2, 10, 20, 3, 4, 30, 40] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let (_, rec) = read_edf_bytes(&out, 1).unwrap();
        assert_eq!(rec.samples, vec![10.0, 20.0, 30.0, 40.0]);
        assert_eq!(rec.sample_rate_hz, 4);
        assert!(matches!(
            read_edf_bytes(&out, 2),
            Err(Error::ChannelNotFound { index: 2, available: 2 })
        ));
        let truncated = &out[..out.len() - 3];
        assert!(matches!(
            read_edf_bytes(truncated, 0),
            Err(Error::TruncatedRecord { record: 1, offset: 776 })
        ));
    }

    #[test]
    fn rejects_bad_headers() {
        let rec = record_from_digital(&[0; 128], full_range(-1.0, 1.0), 128);
        let mut bytes = write_edf_bytes(&rec).unwrap();
        bytes[184..192].copy_from_slice(b"300     ");
        match read_edf_bytes(&bytes, 0) {
            Err(Error::EdfFormat { offset, .. }) => assert_eq!(offset, 184),
            other => panic!("unexpected {other:?}"),
        }
        bytes[0] = b'1';
        assert!(matches!(read_edf_bytes(&bytes, 0), Err(Error::EdfFormat { offset: 0, .. })));
        assert!(matches!(read_edf_bytes(&bytes[..100], 0), Err(Error::EdfFormat { .. })));
    }

    #[test]
    fn uncalibrated_record_gets_spanning_calibration() {
        let rec = EcgRecord::new(vec![-0.5, 0.0, 1.25, 0.3], 4, "s").unwrap();
        let bytes = write_edf_bytes(&rec).unwrap();
        let (_, back) = read_edf_bytes(&bytes, 0).unwrap();
        for (a, b) in rec.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.75 / 65535.0);
        }
    }

    proptest! {
        #[test]
        fn affine_scaling_is_monotone(a in any::<i16>(), b in any::<i16>(), lo in -10.0f64..0.0, span in 0.01f64..20.0) {
            prop_assume!(a < b);
            let cal = full_range(lo, lo + span);
            prop_assert!(cal.to_physical(a) < cal.to_physical(b));
        }

        #[test]
        fn digital_grid_records_round_trip(digital in prop::collection::vec(any::<i16>(), 1..6).prop_map(|v| v.repeat(64)),
                                            lo in -5.0f64..-0.5, hi in 0.5f64..5.0) {
            // 8-character header fields hold three decimals comfortably.
            let (lo, hi) = ((lo * 1000.0).round() / 1000.0, (hi * 1000.0).round() / 1000.0);
            let rec = record_from_digital(&digital, full_range(lo, hi), 64);
            let back = read_edf_bytes(&write_edf_bytes(&rec).unwrap(), 0).unwrap().1;
            prop_assert_eq!(back.samples.len(), rec.samples.len());
            for (x, y) in rec.samples.iter().zip(&back.samples) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
