//! `synth-data`, `ingest` and `window`.

use std::fs;
use std::path::PathBuf;

use anyhow::Context as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sleeplite_core::signal_io::{
    parse_annotations, plan_events, read_dataset, read_edf_bytes, read_edf_header, synth_ecg, write_subject,
    AnnotationFormat, RecordSpan,
};
use sleeplite_core::windowing::{label_seconds, make_windows, normal_keep_for_share, split, undersample, write_windows};
use sleeplite_core::{EventKind, WindowSet, NUM_CLASSES};

use super::{Context, DATA_DIR, SPLITS, WINDOWS_DIR};
use crate::config::config_error;

#[derive(Debug, Clone, Serialize)]
struct SubjectSummary {
    subject: String,
    duration_s: f64,
    events: usize,
    event_seconds: [f64; 3],
}

fn summarize(record: &sleeplite_core::EcgRecord, events: &[sleeplite_core::RespEvent]) -> SubjectSummary {
    let mut secs = [0.0; 3];
    for e in events {
        let k = match e.kind {
            EventKind::Osa => 0,
            EventKind::Csa => 1,
            EventKind::Msa => 2,
        };
        secs[k] += e.duration_s;
    }
    SubjectSummary {
        subject: record.subject_id.clone(),
        duration_s: record.duration_s(),
        events: events.len(),
        event_seconds: secs,
    }
}

pub fn synth_data(ctx: &Context) -> anyhow::Result<()> {
    let plan = &ctx.config.synth;
    let dir = ctx.fresh_stage(DATA_DIR)?;
    let subjects: Vec<_> = (0..plan.subjects)
        .into_par_iter()
        .map(|i| {
            let cfg = plan_events(plan, ctx.config.seed, i)?;
            synth_ecg(&cfg)
        })
        .collect::<Result<_, _>>()?;
    let mut summary = Vec::new();
    for (record, events) in &subjects {
        write_subject(&dir, record, events)?;
        summary.push(summarize(record, events));
    }
    log::info!("wrote {} synthetic subjects to {}", subjects.len(), dir.display());
    ctx.write_manifest("synth-data", &dir, &[], &summary)?;
    Ok(())
}

pub fn ingest(ctx: &Context) -> anyhow::Result<()> {
    let data = &ctx.config.data;
    let src = data
        .ucddb_dir
        .clone()
        .ok_or_else(|| config_error("ingest needs data.ucddb_dir (or --ucddb-dir)"))?;
    let format: AnnotationFormat = data.annotation_format.parse()?;
    let mut records: Vec<(PathBuf, PathBuf, String)> = fs::read_dir(&src)
        .with_context(|| format!("listing {}", src.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("rec" | "edf" | "REC" | "EDF")))
        .filter_map(|p| {
            let stem = p.file_stem()?.to_str()?.to_string();
            let ann = src.join(format!("{stem}{}", data.annotation_suffix));
            ann.is_file().then_some((p, ann, stem))
        })
        .collect();
    records.sort();
    if records.is_empty() {
        return Err(sleeplite_core::Error::InvalidRecord(format!(
            "no recordings with matching `*{}` listings under {}",
            data.annotation_suffix,
            src.display()
        ))
        .into());
    }
    let dir = ctx.fresh_stage(DATA_DIR)?;
    let wanted = data.ecg_channel.to_ascii_lowercase();
    let mut summary = Vec::new();
    let mut inputs = Vec::new();
    for (rec_path, ann_path, stem) in &records {
        let bytes = fs::read(rec_path).with_context(|| format!("reading {}", rec_path.display()))?;
        let header = read_edf_header(&bytes).with_context(|| format!("parsing {}", rec_path.display()))?;
        let channel = header
            .signals
            .iter()
            .position(|s| s.label.trim().to_ascii_lowercase() == wanted)
            .or_else(|| header.signals.iter().position(|s| s.label.to_ascii_lowercase().contains(&wanted)))
            .ok_or_else(|| {
                sleeplite_core::Error::InvalidRecord(format!(
                    "{}: no signal labelled `{}`",
                    rec_path.display(),
                    data.ecg_channel
                ))
            })?;
        let (_, mut record) = read_edf_bytes(&bytes, channel)?;
        record.subject_id = stem.clone();
        let span = RecordSpan {
            start_time_s: header.start_seconds(),
            duration_s: Some(record.duration_s()),
        };
        let events = parse_annotations(ann_path, format, &span)
            .with_context(|| format!("parsing {}", ann_path.display()))?;
        write_subject(&dir, &record, &events)?;
        log::info!("{stem}: {:.0} s, {} events", record.duration_s(), events.len());
        summary.push(summarize(&record, &events));
        inputs.push(rec_path.clone());
        inputs.push(ann_path.clone());
    }
    ctx.write_manifest("ingest", &dir, &inputs, &summary)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub scheme: String,
    pub subjects: usize,
    /// Windows cut from every record before undersampling.
    pub windows: usize,
    pub class_counts: [usize; NUM_CLASSES],
    pub undersampled: bool,
    pub kept_counts: [usize; NUM_CLASSES],
    pub normal_share: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

pub fn window(ctx: &Context) -> anyhow::Result<WindowSummary> {
    let cfg = &ctx.config;
    let scheme = cfg.scheme()?;
    let data_dir = ctx.dataset_dir();
    let subjects = read_dataset(&data_dir).with_context(|| format!("loading dataset {}", data_dir.display()))?;
    let per_subject: Vec<WindowSet> = subjects
        .par_iter()
        .map(|s| {
            let labels = label_seconds(&s.record, &s.events)?;
            make_windows(&s.record, &labels, scheme)
        })
        .collect::<Result<_, _>>()?;
    let all = WindowSet::merge(per_subject)?;
    let class_counts = all.class_counts();
    let kept = if cfg.undersample.enabled {
        let keep = normal_keep_for_share(class_counts, cfg.normal_share());
        undersample(&all, keep, ctx.seed("undersample"))?
    } else {
        all
    };
    let kept_counts = kept.class_counts();
    let (train, val, test) = split(&kept, &cfg.split_spec())?;

    let dir = ctx.fresh_stage(WINDOWS_DIR)?;
    for (name, set) in SPLITS.iter().zip([&train, &val, &test]) {
        write_windows(ctx.windows_path(name), set)?;
    }
    let summary = WindowSummary {
        scheme: scheme.to_string(),
        subjects: subjects.len(),
        windows: class_counts.iter().sum(),
        class_counts,
        undersampled: cfg.undersample.enabled,
        kept_counts,
        normal_share: kept_counts[0] as f64 / kept.len().max(1) as f64,
        train: train.len(),
        val: val.len(),
        test: test.len(),
    };
    log::info!(
        "{} windows ({:?}), kept {:?}; split {}/{}/{}",
        summary.windows,
        class_counts,
        kept_counts,
        summary.train,
        summary.val,
        summary.test
    );
    ctx.write_manifest("window", &dir, &[data_dir], &summary)?;
    Ok(summary)
}
