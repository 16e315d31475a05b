//! Spectral HRV features.
//!
//! The NN series is placed on its cumulative time axis (interval k sits at
//! the sum of intervals 0..=k), linearly resampled at 4 Hz, and its mean
//! removed. The PSD is Welch's estimate with periodic Hann segments of
//! min(256, n) samples, 50 % overlap, per-segment mean removal and
//! one-sided density scaling, in ms²/Hz. Band powers sum PSD·Δf over bins
//! with LF ∈ [0.04, 0.15), HF ∈ [0.15, 0.4), VHF ∈ [0.4, 0.5) Hz.
//!
//! LFHF = LF/HF, LFn = LF/(LF+HF), HFn = HF/(LF+HF), LnHF = ln HF.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::stats::mean;
use super::{guarded, Domain, FeatureVector, QualityFlags, RrSeries};
use crate::error::{Error, Result};

pub const FREQ_FEATURES: [&str; 7] = ["LF", "HF", "VHF", "LFHF", "LFn", "HFn", "LnHF"];

pub const RESAMPLE_HZ: f64 = 4.0;
pub const MIN_SPAN_S: f64 = 60.0;
const MAX_SEGMENT: usize = 256;
const MIN_SAMPLES: usize = 16;

const LF: (f64, f64) = (0.04, 0.15);
const HF: (f64, f64) = (0.15, 0.4);
const VHF: (f64, f64) = (0.4, 0.5);

pub fn freq_features(rr: &RrSeries) -> Result<FeatureVector> {
    if rr.record_span_s + 1e-9 < MIN_SPAN_S {
        return Err(Error::SignalTooShort(format!(
            "spectral features need {MIN_SPAN_S} s of signal, series spans {:.3} s",
            rr.record_span_s
        )));
    }
    let x = resample(&rr.intervals_ms);
    if x.len() < MIN_SAMPLES {
        return Err(Error::TooFewIntervals {
            needed: MIN_SAMPLES,
            got: x.len(),
        });
    }
    let m = mean(&x);
    let centred: Vec<f64> = x.iter().map(|v| v - m).collect();
    let (freqs, psd) = welch_psd(&centred, RESAMPLE_HZ, MAX_SEGMENT.min(centred.len()));
    let df = freqs.get(1).copied().unwrap_or(RESAMPLE_HZ);
    let band = |(lo, hi): (f64, f64)| -> f64 {
        freqs
            .iter()
            .zip(&psd)
            .filter(|(f, _)| **f >= lo && **f < hi)
            .map(|(_, p)| p * df)
            .sum()
    };
    let (lf, hf, vhf) = (band(LF), band(HF), band(VHF));
    let mut flags = rr.flags;
    // Numerically flat spectra count as zero power.
    let floor = 1e-12 * x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let zero = |p: f64| p <= floor;
    if zero(lf) && zero(hf) && zero(vhf) {
        flags |= QualityFlags::ZERO_POWER;
    }
    let (lfhf, ln_hf) = if zero(hf) {
        flags |= QualityFlags::ZERO_HF;
        (0.0, 0.0)
    } else {
        (lf / hf, hf.ln())
    };
    let (lfn, hfn) = if zero(lf + hf) {
        (0.0, 0.0)
    } else {
        (lf / (lf + hf), hf / (lf + hf))
    };
    let mut values = vec![lf, hf, vhf, lfhf, lfn, hfn, ln_hf];
    for v in &mut values {
        *v = guarded(*v, &mut flags, QualityFlags::ZERO_POWER);
    }
    Ok(FeatureVector::from_parts(&FREQ_FEATURES, values, Domain::Freq, flags))
}

/// Linear interpolation of the NN values at 4 Hz over their cumulative time.
pub(crate) fn resample(intervals_ms: &[f64]) -> Vec<f64> {
    let mut t = Vec::with_capacity(intervals_ms.len());
    let mut acc = 0.0;
    for v in intervals_ms {
        acc += v / 1000.0;
        t.push(acc);
    }
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let n = ((t1 - t0) * RESAMPLE_HZ).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let ti = t0 + i as f64 / RESAMPLE_HZ;
        while k + 2 < t.len() && t[k + 1] < ti {
            k += 1;
        }
        let j = (k + 1).min(t.len() - 1);
        let span = t[j] - t[k];
        let w = if span > 0.0 { ((ti - t[k]) / span).clamp(0.0, 1.0) } else { 0.0 };
        out.push(intervals_ms[k] + w * (intervals_ms[j] - intervals_ms[k]));
    }
    out
}

/// One-sided Welch density estimate: periodic Hann window, 50 % overlap,
/// per-segment mean removal. Returns (frequencies, PSD).
pub fn welch_psd(x: &[f64], fs: f64, nperseg: usize) -> (Vec<f64>, Vec<f64>) {
    let nperseg = nperseg.min(x.len()).max(1);
    let step = (nperseg - nperseg / 2).max(1);
    let window: Vec<f64> = (0..nperseg)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / nperseg as f64).cos())
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let nbins = nperseg / 2 + 1;
    let mut psd = vec![0.0; nbins];
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nperseg);
    let mut buf = vec![Complex::new(0.0, 0.0); nperseg];
    let mut segments = 0usize;
    let mut start = 0;
    while start + nperseg <= x.len() {
        let seg = &x[start..start + nperseg];
        let m = mean(seg);
        for ((b, v), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((v - m) * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in psd.iter_mut().enumerate() {
            let mut val = buf[k].norm_sqr() / (fs * wss);
            if k > 0 && !(nperseg.is_multiple_of(2) && k == nperseg / 2) {
                val *= 2.0;
            }
            *p += val;
        }
        segments += 1;
        start += step;
    }
    for p in &mut psd {
        *p /= segments as f64;
    }
    let freqs = (0..nbins).map(|k| k as f64 * fs / nperseg as f64).collect();
    (freqs, psd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_series(freq_hz: f64, span_s: f64) -> RrSeries {
        let mut t = 0.0;
        let mut rr = Vec::new();
        while t < span_s {
            let v = 800.0 + 50.0 * (2.0 * PI * freq_hz * t).sin();
            rr.push(v);
            t += v / 1000.0;
        }
        RrSeries::from_intervals(rr).unwrap()
    }

    /// Direct O(n²) DFT periodogram for a single full-length segment.
    fn dft_band_power(x: &[f64], lo: f64, hi: f64) -> f64 {
        let n = x.len();
        let w: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
        let m = x.iter().sum::<f64>() / n as f64;
        let wss: f64 = w.iter().map(|v| v * v).sum();
        let mut total = 0.0;
        for k in 0..=n / 2 {
            let f = k as f64 * RESAMPLE_HZ / n as f64;
            if f < lo || f >= hi {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * i) as f64 / n as f64;
                re += (v - m) * w[i] * a.cos();
                im += (v - m) * w[i] * a.sin();
            }
            let scale = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 1.0 } else { 2.0 };
            total += scale * (re * re + im * im) / (RESAMPLE_HZ * wss) * RESAMPLE_HZ / n as f64;
        }
        total
    }

    #[test]
    fn respiratory_sine_lands_in_hf() {
        let f = freq_features(&sine_series(0.25, 61.0)).unwrap();
        assert!(f.get("HFn").unwrap() > 0.8);
        let x = resample(&sine_series(0.25, 61.0).intervals_ms);
        let m = mean(&x);
        let c: Vec<f64> = x.iter().map(|v| v - m).collect();
        let hf = dft_band_power(&c, 0.15, 0.4);
        assert!((f.get("HF").unwrap() - hf).abs() <= 1e-6 * hf);
    }

    #[test]
    fn slow_sine_lands_in_lf() {
        let f = freq_features(&sine_series(0.1, 61.0)).unwrap();
        assert!(f.get("LFn").unwrap() > 0.8);
    }

    #[test]
    fn constant_series_is_flagged() {
        let rr = RrSeries::from_intervals(vec![800.0; 80]).unwrap();
        let f = freq_features(&rr).unwrap();
        assert_eq!(&f.values[..3], &[0.0, 0.0, 0.0]);
        assert!(f.flags.contains(QualityFlags::ZERO_POWER | QualityFlags::ZERO_HF));
        assert!(f.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn short_span_rejected() {
        let rr = RrSeries::from_intervals(vec![800.0; 20]).unwrap();
        assert!(freq_features(&rr).is_err());
    }

    #[test]
    fn welch_multi_segment_matches_parseval_scale() {
        // White noise: mean density ≈ variance / (fs/2).
        use rand::Rng;
        let mut rng = crate::rng::substream(3, "welch-test");
        let x: Vec<f64> = (0..4096).map(|_| rng.gen::<f64>() - 0.5).collect();
        let (_, psd) = welch_psd(&x, 4.0, 256);
        let avg = psd[1..128].iter().sum::<f64>() / 127.0;
        let expect = (1.0 / 12.0) / 2.0;
        assert!((avg - expect).abs() < 0.1 * expect, "{avg} vs {expect}");
    }
}
