//! Second-order Butterworth sections and zero-phase filtering.

use std::f64::consts::{PI, SQRT_2};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    pub(crate) fn lowpass(cutoff_hz: f64, fs: f64) -> Self {
        let k = (PI * cutoff_hz / fs).tan();
        let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
        let b0 = k * k * norm;
        Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - SQRT_2 * k + k * k) * norm],
        }
    }

    pub(crate) fn highpass(cutoff_hz: f64, fs: f64) -> Self {
        let k = (PI * cutoff_hz / fs).tan();
        let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
        Biquad {
            b: [norm, -2.0 * norm, norm],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - SQRT_2 * k + k * k) * norm],
        }
    }

    /// Transposed direct form II, state primed for a constant input `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let dc = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let y0 = dc * x0;
        let mut z2 = b2 * x0 - a2 * y0;
        let mut z1 = b1 * x0 - a1 * y0 + z2;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// Forward-backward filtering through a cascade of sections, with odd
/// reflection padding of `pad` samples on each end.
pub(crate) fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone_gain(sections: &[Biquad], f: f64, fs: f64) -> f64 {
        let n = 4096;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect();
        let y = filtfilt(sections, &x, 256);
        let mid = &y[1024..3072];
        let rms_y = (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt();
        rms_y / (0.5f64).sqrt()
    }

    #[test]
    fn cutoff_is_half_power_after_two_passes() {
        let fs = 128.0;
        let lp = [Biquad::lowpass(15.0, fs)];
        // -3 dB per pass, so two passes give 0.5 amplitude at the cutoff.
        assert!((tone_gain(&lp, 15.0, fs) - 0.5).abs() < 0.01);
        assert!(tone_gain(&lp, 2.0, fs) > 0.99);
        let hp = [Biquad::highpass(5.0, fs)];
        assert!((tone_gain(&hp, 5.0, fs) - 0.5).abs() < 0.01);
        assert!(tone_gain(&hp, 0.5, fs) < 0.01);
    }

    #[test]
    fn constant_input_passes_lowpass_unchanged() {
        let y = filtfilt(&[Biquad::lowpass(15.0, 128.0)], &[3.0; 200], 64);
        assert!(y.iter().all(|v| (v - 3.0).abs() < 1e-9));
    }
}
