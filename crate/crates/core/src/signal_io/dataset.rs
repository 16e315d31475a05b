//! On-disk dataset layout: one directory per subject holding `record.edf`
//! and `events.csv` (canonical annotation CSV).

use std::fs;
use std::path::{Path, PathBuf};

use super::annotations::{parse_annotations, write_annotations_csv, AnnotationFormat, RecordSpan};
use super::edf::{read_edf, write_edf};
use super::{EcgRecord, RespEvent};
use crate::error::{Error, Result};

pub const RECORD_FILE: &str = "record.edf";
pub const ANNOTATIONS_FILE: &str = "events.csv";

#[derive(Debug, Clone)]
pub struct SubjectData {
    pub record: EcgRecord,
    pub events: Vec<RespEvent>,
}

pub fn write_subject(root: impl AsRef<Path>, record: &EcgRecord, events: &[RespEvent]) -> Result<PathBuf> {
    let dir = root.as_ref().join(&record.subject_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_edf(dir.join(RECORD_FILE), record)?;
    write_annotations_csv(dir.join(ANNOTATIONS_FILE), events)?;
    Ok(dir)
}

pub fn load_subject(dir: impl AsRef<Path>) -> Result<SubjectData> {
    let dir = dir.as_ref();
    let mut record = read_edf(dir.join(RECORD_FILE), 0)?;
    if let Some(name) = dir.file_name().and_then(|n| n.to_str()) {
        record.subject_id = name.to_string();
    }
    let span = RecordSpan {
        start_time_s: record.start_time_s,
        duration_s: Some(record.duration_s()),
    };
    let events = parse_annotations(dir.join(ANNOTATIONS_FILE), AnnotationFormat::CanonicalCsv, &span)?;
    Ok(SubjectData { record, events })
}

/// Loads every subject directory under `root`, ordered by subject id.
pub fn read_dataset(root: impl AsRef<Path>) -> Result<Vec<SubjectData>> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RECORD_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidRecord(format!(
            "no subject directories with {RECORD_FILE} under {}",
            root.display()
        )));
    }
    dirs.iter().map(load_subject).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{synth_ecg, PlannedEvent, SynthConfig};
    use crate::class::EventKind;

    #[test]
    fn subject_round_trip_through_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            duration_s: 40.0,
            subject_id: "s01".into(),
            event_plan: vec![PlannedEvent {
                onset_s: 12.0,
                duration_s: 14.5,
                kind: EventKind::Msa,
            }],
            ..Default::default()
        };
        let (rec, events) = synth_ecg(&cfg).unwrap();
        write_subject(tmp.path(), &rec, &events).unwrap();
        let all = read_dataset(tmp.path()).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].events, events);
        assert_eq!(all[0].record.subject_id, "s01");
        let max_err = rec
            .samples
            .iter()
            .zip(&all[0].record.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-4);
    }
}
