//! QRS detection in the Pan-Tompkins style.
//!
//! Stages: 5–15 Hz zero-phase band-pass, centred five-point derivative,
//! squaring, centred 150 ms moving-window integration, then adaptive dual
//! thresholds over the integrated signal with a 200 ms refractory period,
//! search-back for missed beats and a slope test for T waves. Each accepted
//! fiducial is moved to the largest absolute band-passed sample nearby.

use super::filter::{filtfilt, Biquad};
use crate::error::{Error, Result};

const REFRACTORY_S: f64 = 0.200;
const T_WAVE_S: f64 = 0.360;
const MWI_S: f64 = 0.150;
const REFINE_S: f64 = 0.100;
const SEARCH_BACK_FACTOR: f64 = 1.66;
const MIN_FS: f64 = 100.0;

struct Candidate {
    pos: usize,
    value: f64,
}

/// Returns strictly increasing R-peak sample indices.
pub fn detect_r_peaks(ecg: &[f64], fs: f64) -> Result<Vec<usize>> {
    if !(fs >= MIN_FS) || !fs.is_finite() {
        return Err(Error::InvalidSampleRate(fs));
    }
    let min_len = (2.0 * fs).ceil() as usize;
    if ecg.len() < min_len {
        return Err(Error::SignalTooShort(format!(
            "{} samples, need at least {min_len} (2 s)",
            ecg.len()
        )));
    }
    if ecg.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("ECG contains non-finite samples".into()));
    }
    let (lo, hi) = ecg
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo <= 0.0 {
        return Err(Error::ZeroVariance);
    }

    let bp = filtfilt(
        &[Biquad::highpass(5.0, fs), Biquad::lowpass(15.0, fs)],
        ecg,
        fs.round() as usize,
    );
    let deriv = derivative(&bp);
    let squared: Vec<f64> = deriv.iter().map(|d| d * d).collect();
    let mwi = moving_window(&squared, ((MWI_S * fs).round() as usize) | 1);

    let refractory = (REFRACTORY_S * fs).round() as usize;
    let candidates = local_maxima(&mwi, refractory);
    let learn = min_len.min(mwi.len());
    let peak0 = mwi[..learn].iter().cloned().fold(0.0, f64::max);
    let mean0 = mwi[..learn].iter().sum::<f64>() / learn as f64;
    let mut state = Thresholds {
        spki: peak0 / 3.0,
        npki: mean0 / 2.0,
    };

    let slope_half = (0.075 * fs).round() as usize;
    let max_slope = |pos: usize| {
        let a = pos.saturating_sub(slope_half);
        let b = (pos + slope_half + 1).min(deriv.len());
        deriv[a..b].iter().fold(0.0f64, |m, d| m.max(d.abs()))
    };

    let mut qrs: Vec<usize> = Vec::new();
    let mut last_slope = 0.0;
    let mut noise: Vec<&Candidate> = Vec::new();
    for cand in &candidates {
        if let (Some(&last), Some(rr)) = (qrs.last(), mean_recent_rr(&qrs)) {
            if (cand.pos - last) as f64 > SEARCH_BACK_FACTOR * rr {
                let thr2 = 0.5 * state.thr1();
                let best = noise
                    .iter()
                    .filter(|c| c.pos > last + refractory && c.pos + refractory < cand.pos && c.value > thr2)
                    .max_by(|a, b| a.value.total_cmp(&b.value));
                if let Some(found) = best {
                    state.spki = 0.25 * found.value + 0.75 * state.spki;
                    last_slope = max_slope(found.pos);
                    qrs.push(found.pos);
                    noise.clear();
                }
            }
        }
        let since = qrs.last().map(|&l| cand.pos - l);
        if since.is_some_and(|s| s < refractory) {
            continue;
        }
        if cand.value > state.thr1() {
            let slope = max_slope(cand.pos);
            let t_wave = since.is_some_and(|s| (s as f64) < T_WAVE_S * fs) && slope < 0.5 * last_slope;
            if !t_wave {
                state.spki = 0.125 * cand.value + 0.875 * state.spki;
                last_slope = slope;
                qrs.push(cand.pos);
                noise.clear();
                continue;
            }
        }
        state.npki = 0.125 * cand.value + 0.875 * state.npki;
        noise.push(cand);
    }

    let reach = (REFINE_S * fs).round() as usize;
    let mut peaks: Vec<usize> = Vec::with_capacity(qrs.len());
    for pos in qrs {
        let a = pos.saturating_sub(reach);
        let b = (pos + reach + 1).min(bp.len());
        let r = (a..b)
            .max_by(|&i, &j| bp[i].abs().total_cmp(&bp[j].abs()).then(j.cmp(&i)))
            .expect("non-empty refinement range");
        match peaks.last() {
            Some(&prev) if r <= prev || r - prev < refractory => {
                if bp[r].abs() > bp[prev].abs() {
                    *peaks.last_mut().unwrap() = r;
                }
            }
            _ => peaks.push(r),
        }
    }
    Ok(peaks)
}

struct Thresholds {
    spki: f64,
    npki: f64,
}

impl Thresholds {
    fn thr1(&self) -> f64 {
        self.npki + 0.25 * (self.spki - self.npki)
    }
}

fn mean_recent_rr(qrs: &[usize]) -> Option<f64> {
    if qrs.len() < 2 {
        return None;
    }
    let tail = &qrs[qrs.len().saturating_sub(9)..];
    Some((tail[tail.len() - 1] - tail[0]) as f64 / (tail.len() - 1) as f64)
}

/// (2x[n+2] + x[n+1] − x[n−1] − 2x[n−2]) / 8 with edge clamping.
fn derivative(x: &[f64]) -> Vec<f64> {
    let n = x.len() as isize;
    let at = |i: isize| x[i.clamp(0, n - 1) as usize];
    (0..n)
        .map(|i| (2.0 * at(i + 2) + at(i + 1) - at(i - 1) - 2.0 * at(i - 2)) / 8.0)
        .collect()
}

/// Centred moving average over an odd-length window, truncated at the edges.
fn moving_window(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        prefix.push(acc);
    }
    (0..x.len())
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(x.len());
            (prefix[b] - prefix[a]) / width as f64
        })
        .collect()
}

/// Local maxima, merging any two closer than `min_gap` into the larger.
fn local_maxima(x: &[f64], min_gap: usize) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = Vec::new();
    for i in 1..x.len().saturating_sub(1) {
        if !(x[i] > x[i - 1] && x[i] >= x[i + 1]) {
            continue;
        }
        match out.last_mut() {
            Some(last) if i - last.pos < min_gap => {
                if x[i] > last.value {
                    *last = Candidate { pos: i, value: x[i] };
                }
            }
            _ => out.push(Candidate { pos: i, value: x[i] }),
        }
    }
    out
}
