//! Per-second labelling, fixed-span windowing at 1 s stride, Normal-class
//! undersampling and leakage-free partitioning.

mod container;
mod split;
mod undersample;

pub use container::{read_windows, read_windows_bytes, write_windows, write_windows_bytes, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use split::{split, split_indices, SplitIndices, SplitMode, SplitSpec};
pub use undersample::{normal_keep_for_share, undersample, CLASSICAL_NORMAL_SHARE, CNN_NORMAL_SHARE};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::class::{ApneaClass, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::signal_io::{EcgRecord, RespEvent};

/// Span of the short (time-domain / CNN) segment in seconds.
pub const SHORT_SPAN_S: usize = 11;
/// Span of the long (spectral / nonlinear) segment in seconds.
pub const LONG_SPAN_S: usize = 61;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecondLabels {
    pub labels: Vec<ApneaClass>,
}

impl SecondLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Resolves events to one label per whole second of the record.
///
/// A second `[t, t+1)` takes the kind of any event that overlaps it by a
/// positive amount. When two events of different kinds touch the same second
/// without overlapping each other, the one covering more of that second wins
/// (ties go to the lower class index). Overlapping events of different kinds are
/// rejected as ambiguous ground truth.
pub fn label_seconds(record: &EcgRecord, events: &[RespEvent]) -> Result<SecondLabels> {
    let n = record.whole_seconds();
    let duration = record.duration_s();
    let mut sorted: Vec<&RespEvent> = events.iter().collect();
    sorted.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));

    for ev in &sorted {
        if ev.onset_s < 0.0 || ev.end_s() > duration + 1e-9 {
            return Err(Error::EventOutOfSpan(format!(
                "[{}, {}) vs record of {duration} s",
                ev.onset_s,
                ev.end_s()
            )));
        }
    }
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            if b.onset_s >= a.end_s() {
                break;
            }
            if a.kind != b.kind {
                return Err(Error::AmbiguousLabels(format!(
                    "{} [{}, {}) overlaps {} [{}, {})",
                    a.kind,
                    a.onset_s,
                    a.end_s(),
                    b.kind,
                    b.onset_s,
                    b.end_s()
                )));
            }
        }
    }

    let mut cover = vec![[0.0f64; NUM_CLASSES]; n];
    for ev in &sorted {
        let first = ev.onset_s.floor() as usize;
        let last = (ev.end_s().ceil() as usize).min(n);
        let k = ev.kind.class().index();
        for (t, c) in cover.iter_mut().enumerate().take(last).skip(first) {
            let overlap = (ev.end_s().min(t as f64 + 1.0) - ev.onset_s.max(t as f64)).max(0.0);
            c[k] += overlap;
        }
    }
    let labels = cover
        .iter()
        .map(|c| {
            let mut best = ApneaClass::Normal;
            let mut best_cover = 0.0;
            for class in &ApneaClass::ALL[1..] {
                if c[class.index()] > best_cover {
                    best_cover = c[class.index()];
                    best = *class;
                }
            }
            best
        })
        .collect();
    Ok(SecondLabels { labels })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "WIN11")]
    Win11,
    #[serde(rename = "WIN61")]
    Win61,
    #[serde(rename = "WINMIX")]
    WinMix,
}

impl Scheme {
    /// Seconds of signal a window of this scheme covers.
    pub fn span_s(self) -> usize {
        match self {
            Scheme::Win11 => SHORT_SPAN_S,
            Scheme::Win61 | Scheme::WinMix => LONG_SPAN_S,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Scheme::Win11 => 0,
            Scheme::Win61 => 1,
            Scheme::WinMix => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Scheme::Win11),
            1 => Ok(Scheme::Win61),
            2 => Ok(Scheme::WinMix),
            c => Err(Error::Container(format!("unknown scheme code {c}"))),
        }
    }

    pub fn has_short(self) -> bool {
        matches!(self, Scheme::Win11 | Scheme::WinMix)
    }

    pub fn has_long(self) -> bool {
        matches!(self, Scheme::Win61 | Scheme::WinMix)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Win11 => "WIN11",
            Scheme::Win61 => "WIN61",
            Scheme::WinMix => "WINMIX",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "").as_str() {
            "WIN11" => Ok(Scheme::Win11),
            "WIN61" => Ok(Scheme::Win61),
            "WINMIX" => Ok(Scheme::WinMix),
            _ => Err(Error::InvalidArgument(format!("unknown windowing scheme `{s}`"))),
        }
    }
}

/// One labelled ECG segment anchored at `label_second`.
///
/// `samples` holds the scheme's full span; for WINMIX the short segment is
/// the first 11 s of the long one (both share the anchor).
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub scheme: Scheme,
    pub label: ApneaClass,
    pub label_second: u32,
    pub subject_id: String,
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl Window {
    pub fn samples_short(&self) -> Option<&[f32]> {
        self.scheme
            .has_short()
            .then(|| &self.samples[..SHORT_SPAN_S * self.sample_rate_hz as usize])
    }

    pub fn samples_long(&self) -> Option<&[f32]> {
        self.scheme.has_long().then_some(&self.samples[..])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub scheme: Scheme,
    pub sample_rate_hz: u32,
    pub windows: Vec<Window>,
}

impl WindowSet {
    pub fn empty(scheme: Scheme, sample_rate_hz: u32) -> Self {
        WindowSet {
            scheme,
            sample_rate_hz,
            windows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn samples_per_window(&self) -> usize {
        self.scheme.span_s() * self.sample_rate_hz as usize
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for w in &self.windows {
            c[w.label.index()] += 1;
        }
        c
    }

    pub fn labels(&self) -> Vec<ApneaClass> {
        self.windows.iter().map(|w| w.label).collect()
    }

    /// Subset by index, preserving the given index order.
    pub fn select(&self, indices: &[usize]) -> WindowSet {
        WindowSet {
            scheme: self.scheme,
            sample_rate_hz: self.sample_rate_hz,
            windows: indices.iter().map(|&i| self.windows[i].clone()).collect(),
        }
    }

    /// Concatenates per-subject sets, ordered by (subject_id, label_second).
    pub fn merge(sets: Vec<WindowSet>) -> Result<WindowSet> {
        let mut it = sets.into_iter();
        let mut out = match it.next() {
            Some(s) => s,
            None => return Err(Error::InvalidArgument("no window sets to merge".into())),
        };
        for s in it {
            if s.scheme != out.scheme || s.sample_rate_hz != out.sample_rate_hz {
                return Err(Error::InvalidArgument("cannot merge window sets of different scheme or rate".into()));
            }
            out.windows.extend(s.windows);
        }
        out.windows
            .sort_by(|a, b| a.subject_id.cmp(&b.subject_id).then(a.label_second.cmp(&b.label_second)));
        Ok(out)
    }
}

/// Cuts every window of `scheme` at 1 s stride.
///
/// A window anchored at second `t` covers `[t, t + span)` and is labelled with
/// `labels[t]`; a record of `d` whole seconds yields `d - span + 1` windows.
pub fn make_windows(record: &EcgRecord, labels: &SecondLabels, scheme: Scheme) -> Result<WindowSet> {
    let duration = record.whole_seconds();
    let span = scheme.span_s();
    if duration < span {
        return Err(Error::RecordTooShort {
            duration_s: duration,
            span_s: span,
        });
    }
    if labels.len() != duration {
        return Err(Error::InvalidArgument(format!(
            "{} second labels for a {duration} s record",
            labels.len()
        )));
    }
    let fs = record.sample_rate_hz as usize;
    let windows = (0..=duration - span)
        .map(|t| Window {
            scheme,
            label: labels.labels[t],
            label_second: t as u32,
            subject_id: record.subject_id.clone(),
            samples: record.samples[t * fs..(t + span) * fs].iter().map(|&x| x as f32).collect(),
            sample_rate_hz: record.sample_rate_hz,
        })
        .collect();
    Ok(WindowSet {
        scheme,
        sample_rate_hz: record.sample_rate_hz,
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::class::EventKind;
    use proptest::prelude::*;

    fn record(seconds: usize) -> EcgRecord {
        let samples = (0..seconds * 128).map(|i| (i as f64 * 0.01).sin()).collect();
        EcgRecord::new(samples, 128, "s").unwrap()
    }

    fn ev(onset: f64, dur: f64, kind: EventKind) -> RespEvent {
        RespEvent::new(onset, dur, kind).unwrap()
    }

    #[test]
    fn interval_cover_labels() {
        let labels = label_seconds(&record(100), &[ev(30.0, 20.0, EventKind::Osa)]).unwrap();
        assert_eq!(labels.len(), 100);
        for (t, l) in labels.labels.iter().enumerate() {
            let want = if (30..50).contains(&t) { ApneaClass::Osa } else { ApneaClass::Normal };
            assert_eq!(*l, want, "second {t}");
        }
    }

    #[test]
    fn no_events_all_normal() {
        let labels = label_seconds(&record(20), &[]).unwrap();
        assert!(labels.labels.iter().all(|&l| l == ApneaClass::Normal));
    }

    #[test]
    fn partial_seconds_labelled_by_any_overlap() {
        // Oracle: enumerate unit intervals with positive overlap.
        let e = ev(10.4, 11.0, EventKind::Csa);
        let expected: Vec<usize> = (0..40)
            .filter(|&t| (e.end_s().min(t as f64 + 1.0) - e.onset_s.max(t as f64)) > 0.0)
            .collect();
        assert_eq!(expected, (10..=21).collect::<Vec<_>>());
        let labels = label_seconds(&record(40), &[e]).unwrap();
        let got: Vec<usize> = (0..40).filter(|&t| labels.labels[t] == ApneaClass::Csa).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn conflicting_events() {
        let r = record(60);
        let res = label_seconds(&r, &[ev(10.0, 15.0, EventKind::Osa), ev(20.0, 15.0, EventKind::Csa)]);
        assert!(matches!(res, Err(Error::AmbiguousLabels(_))));
        // Same kind may overlap.
        label_seconds(&r, &[ev(10.0, 15.0, EventKind::Osa), ev(20.0, 15.0, EventKind::Osa)]).unwrap();
        // Touching a shared second: larger coverage wins.
        let l = label_seconds(&r, &[ev(10.0, 10.7, EventKind::Osa), ev(20.7, 12.0, EventKind::Csa)]).unwrap();
        assert_eq!(l.labels[20], ApneaClass::Osa);
        assert!(matches!(
            label_seconds(&r, &[ev(55.0, 10.0, EventKind::Osa)]),
            Err(Error::EventOutOfSpan(_))
        ));
    }

    #[test]
    fn window_counts_and_lengths() {
        let r = record(61);
        let l = label_seconds(&r, &[]).unwrap();
        let w = make_windows(&r, &l, Scheme::Win11).unwrap();
        assert_eq!(w.len(), 51);
        assert!(w.windows.iter().all(|w| w.samples.len() == 1408));

        let r = record(120);
        let l = label_seconds(&r, &[]).unwrap();
        assert_eq!(make_windows(&r, &l, Scheme::Win61).unwrap().len(), 60);

        let mix = make_windows(&r, &l, Scheme::WinMix).unwrap();
        let first = &mix.windows[0];
        let expect_short: Vec<f32> = r.samples[..1408].iter().map(|&x| x as f32).collect();
        let expect_long: Vec<f32> = r.samples[..7808].iter().map(|&x| x as f32).collect();
        assert_eq!(first.samples_short().unwrap(), &expect_short[..]);
        assert_eq!(first.samples_long().unwrap(), &expect_long[..]);
        assert!(make_windows(&record(10), &label_seconds(&record(10), &[]).unwrap(), Scheme::Win11).is_err());
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("WIN-11".parse::<Scheme>().unwrap(), Scheme::Win11);
        assert_eq!("winmix".parse::<Scheme>().unwrap(), Scheme::WinMix);
        let err = "WIN-30".parse::<Scheme>().unwrap_err().to_string();
        assert!(err.contains("unknown windowing scheme"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn window_label_matches_anchor_second(seconds in 61usize..140, onset in 0.0f64..40.0, dur in 10.0f64..20.0) {
            let r = record(seconds);
            let labels = label_seconds(&r, &[ev(onset, dur, EventKind::Msa)]).unwrap();
            for scheme in [Scheme::Win11, Scheme::Win61, Scheme::WinMix] {
                let set = make_windows(&r, &labels, scheme).unwrap();
                prop_assert_eq!(set.len(), seconds - scheme.span_s() + 1);
                for w in &set.windows {
                    prop_assert_eq!(w.label, labels.labels[w.label_second as usize]);
                }
            }
        }
    }
}
