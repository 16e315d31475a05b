//! Fixtures shared by the benchmarks.

use sleeplite_core::signal_io::{synth_ecg, PlannedEvent, SynthConfig};
use sleeplite_core::windowing::{label_seconds, make_windows};
use sleeplite_core::{EventKind, Scheme, WindowSet};

/// A few minutes of synthetic ECG with one event of each kind, cut into
/// windows of `scheme`.
pub fn windows(scheme: Scheme, duration_s: f64) -> WindowSet {
    let mut plan = Vec::new();
    for (i, kind) in [EventKind::Osa, EventKind::Csa, EventKind::Msa].into_iter().enumerate() {
        plan.push(PlannedEvent {
            onset_s: 20.0 + 60.0 * i as f64,
            duration_s: 20.0,
            kind,
        });
    }
    let cfg = SynthConfig {
        duration_s,
        heart_rate_bpm: 66.0,
        noise_std_mv: 0.05,
        rsa_depth: 0.03,
        rr_jitter: 0.01,
        event_plan: plan,
        ..SynthConfig::default()
    };
    let (rec, ev) = synth_ecg(&cfg).expect("valid synthetic config");
    let labels = label_seconds(&rec, &ev).expect("labels");
    make_windows(&rec, &labels, scheme).expect("windows")
}
