use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::RespEvent;
use crate::class::EventKind;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "onset_s,duration_s,type";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationFormat {
    /// Vendor respiratory-event listing with clock times (best effort).
    UcddbText,
    /// `onset_s,duration_s,type` with onsets relative to the record start.
    CanonicalCsv,
}

impl FromStr for AnnotationFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ucddb-text" => Ok(AnnotationFormat::UcddbText),
            "canonical-csv" => Ok(AnnotationFormat::CanonicalCsv),
            other => Err(Error::InvalidArgument(format!("unknown annotation format `{other}`"))),
        }
    }
}

/// Where the record sits in wall-clock time; used to resolve clock-time rows
/// and to reject events outside the recording.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecordSpan {
    pub start_time_s: f64,
    pub duration_s: Option<f64>,
}

/// Maps a vendor event token onto a subtype. Hypopneas keep their subtype;
/// an untyped hypopnea counts as obstructive.
fn event_token(token: &str) -> Option<EventKind> {
    let t = token.trim().to_ascii_uppercase();
    let kind = match t.as_str() {
        "OSA" | "APNEA-O" | "APNOEA-O" | "OBSTRUCTIVE" | "HYP-O" | "HYPOPNEA-O" => EventKind::Osa,
        "CSA" | "APNEA-C" | "APNOEA-C" | "CENTRAL" | "HYP-C" | "HYPOPNEA-C" => EventKind::Csa,
        "MSA" | "APNEA-M" | "APNOEA-M" | "MIXED" | "HYP-M" | "HYPOPNEA-M" => EventKind::Msa,
        "HYP" | "HYPOPNEA" | "HYPOPNOEA" => EventKind::Osa,
        _ => return None,
    };
    Some(kind)
}

fn parse_clock(token: &str) -> Option<f64> {
    let parts: Vec<&str> = token.split(':').collect();
    if parts.len() != 3 {
        return None;
    }
    let h: u32 = parts[0].parse().ok()?;
    let m: u32 = parts[1].parse().ok()?;
    let s: f64 = parts[2].parse().ok()?;
    if h > 23 || m > 59 || !(0.0..60.0).contains(&s) {
        return None;
    }
    Some((h * 3600 + m * 60) as f64 + s)
}

fn parse_csv(text: &str) -> Result<Vec<(usize, RespEvent)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    if header.trim().trim_start_matches('\u{feff}') != CSV_HEADER {
        return Err(Error::Annotation {
            line: 1,
            reason: format!("expected header `{CSV_HEADER}`"),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let err = |reason: String| Error::Annotation { line: line_no, reason };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        }
        let onset: f64 = fields[0]
            .parse()
            .map_err(|_| err(format!("bad onset `{}`", fields[0])))?;
        let duration: f64 = fields[1]
            .parse()
            .map_err(|_| err(format!("bad duration `{}`", fields[1])))?;
        let kind = event_token(fields[2]).ok_or_else(|| err(format!("unknown event token `{}`", fields[2])))?;
        if !(duration > 0.0) {
            return Err(err(format!("negative or zero duration {duration}")));
        }
        if !(onset >= 0.0) {
            return Err(err(format!("negative onset {onset}")));
        }
        out.push((line_no, RespEvent::new(onset, duration, kind)?));
    }
    Ok(out)
}

fn parse_ucddb(text: &str, span: &RecordSpan) -> Result<Vec<(usize, RespEvent)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let Some(clock) = tokens.first().and_then(|t| parse_clock(t)) else {
            if !line.trim().is_empty() {
                log::debug!("annotations line {line_no}: skipped (no clock time)");
            }
            continue;
        };
        let err = |reason: String| Error::Annotation { line: line_no, reason };
        let token = tokens.get(1).ok_or_else(|| err("missing event type".into()))?;
        let kind = event_token(token).ok_or_else(|| err(format!("unknown event token `{token}`")))?;
        let duration: f64 = tokens[2..]
            .iter()
            .find_map(|t| t.parse::<f64>().ok())
            .ok_or_else(|| err("missing duration".into()))?;
        if !(duration > 0.0) {
            return Err(err(format!("negative or zero duration {duration}")));
        }
        let mut onset = clock - span.start_time_s;
        if onset < 0.0 {
            // Recordings run overnight; a clock time "earlier" than the start
            // belongs to the next day unless that would put it > 12 h later.
            onset += 86_400.0;
            if onset > 43_200.0 {
                return Err(err(format!("clock time {} is before record start", tokens[0])));
            }
        }
        out.push((line_no, RespEvent::new(onset, duration, kind)?));
    }
    Ok(out)
}

/// Parses annotation text; events beyond the record end are dropped with a warning.
pub fn parse_annotations_str(text: &str, format: AnnotationFormat, span: &RecordSpan) -> Result<Vec<RespEvent>> {
    let parsed = match format {
        AnnotationFormat::CanonicalCsv => parse_csv(text)?,
        AnnotationFormat::UcddbText => parse_ucddb(text, span)?,
    };
    if parsed.is_empty() {
        log::warn!("annotation file contains no events");
    }
    let mut events: Vec<RespEvent> = parsed
        .into_iter()
        .filter(|(line, ev)| match span.duration_s {
            Some(d) if ev.end_s() > d + 1e-9 => {
                log::warn!(
                    "annotations line {line}: event [{}, {}) outside record span of {d} s rejected",
                    ev.onset_s,
                    ev.end_s()
                );
                false
            }
            _ => true,
        })
        .map(|(_, ev)| ev)
        .collect();
    events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    Ok(events)
}

pub fn parse_annotations(path: impl AsRef<Path>, format: AnnotationFormat, span: &RecordSpan) -> Result<Vec<RespEvent>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations_str(&text, format, span)
}

pub fn annotations_to_csv(events: &[RespEvent]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for ev in events {
        s.push_str(&format!("{},{},{}\n", ev.onset_s, ev.duration_s, ev.kind));
    }
    s
}

pub fn write_annotations_csv(path: impl AsRef<Path>, events: &[RespEvent]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, annotations_to_csv(events)).map_err(|e| Error::io(path, e))
}
