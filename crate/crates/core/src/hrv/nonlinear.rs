//! Nonlinear HRV features: Poincaré geometry, fragmentation, heart-rate
//! asymmetry, DFA, entropies, Lempel-Ziv complexity and fractal dimensions.
//!
//! Conventions, with x = NN[..n−1], y = NN[1..], d = y − x and P = n − 1
//! Poincaré points:
//!
//! * SD1² = ½·mean(d²), so SD1 = RMSSD/√2 exactly. SD2² = 2·Var(NN) − SD1²
//!   with the population variance, clamped at 0. SD1_SD2 = SD1/SD2,
//!   S = π·SD1·SD2, CSI = SD2/SD1, CVI = log10(16·SD1·SD2),
//!   CSI_Modified = SD2²/SD1.
//! * Fragmentation works on the signs of d. An inflection is a strict sign
//!   change between consecutive non-zero differences. PIP = inflections / n.
//!   Monotone segments are maximal runs of equal non-zero sign; IALS is the
//!   reciprocal of their mean length and PSS the share of differences in
//!   segments shorter than 3. Alternation segments are maximal runs in which
//!   every consecutive pair of differences changes sign; PAS is the share of
//!   differences in alternation segments of length ≥ 4. All three shares are
//!   fractions in [0, 1].
//! * Asymmetry splits the Poincaré points into decelerations (d > 0) and
//!   accelerations (d < 0). Distances to the identity line are |d|/√2, to
//!   the perpendicular line through the centroid |(x − x̄) + (y − ȳ)|/√2;
//!   θ = |π/4 − atan(y/x)| and sector area ½θ(x² + y²). GI, SI and AI are the
//!   deceleration shares (in %) of summed distance, angle and area;
//!   PI = % of off-line points that are accelerations. SD1d² and SD1a² sum
//!   squared identity-line distances over each side divided by P; SD2d² and
//!   SD2a² do the same for centroid-line distances, each side also taking
//!   half of the on-line points. C1d = SD1d²/(SD1d² + SD1a²) and similarly
//!   for C2 and C (with SDNNd² = ½(SD1d² + SD2d²)).
//! * DFA_alpha1: integrated mean-removed series, non-overlapping boxes of
//!   4..=16 beats from the start, linear detrend per box, F(n) the RMS
//!   residual; slope of log F against log n. Needs ≥ 32 intervals.
//! * ApEn and SampEn use m = 2, r = 0.2·SDNN, Chebyshev distance ≤ r.
//!   SampEn counts pairs i < j among the first n − m templates of both
//!   lengths; ApEn includes self matches. FuzzyEn removes each template's
//!   mean and uses membership exp(−(d/r)²) over ordered pairs i ≠ j.
//! * ShanEn: base-2 entropy of a 10-bin histogram spanning [min, max].
//! * LZC: Lempel-Ziv (1976) phrase count of the series binarised at its
//!   median (1 if strictly above), normalised by c·log2(n)/n.
//! * HFD: Higuchi with k = 1..=min(10, n/2). KFD: Katz with L = Σ|Δ|,
//!   a = mean |Δ|, d = max |NN_i − NN_0|, KFD = log10(L/a) / (log10(L/a) +
//!   log10(d/L)).

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI};

use super::stats::{mean, median, slope, variance};
use super::{Domain, FeatureVector, QualityFlags, RrSeries};
use crate::error::{Error, Result};

pub const NONLINEAR_FEATURES: [&str; 35] = [
    "SD1", "SD2", "SD1_SD2", "S", "CSI", "CVI", "CSI_Modified", "PIP", "IALS", "PSS", "PAS", "GI", "SI", "AI",
    "PI", "C1d", "C1a", "SD1d", "SD1a", "C2d", "C2a", "SD2d", "SD2a", "Cd", "Ca", "SDNNd", "SDNNa",
    "DFA_alpha1", "ApEn", "SampEn", "ShanEn", "FuzzyEn", "LZC", "HFD", "KFD",
];

pub const MIN_NONLINEAR_INTERVALS: usize = 10;
const DFA_MIN_BOX: usize = 4;
const DFA_MAX_BOX: usize = 16;
const EMBED_M: usize = 2;
const TOLERANCE_FACTOR: f64 = 0.2;
const SHANNON_BINS: usize = 10;
const HIGUCHI_KMAX: usize = 10;

pub fn nonlinear_features(rr: &RrSeries) -> Result<FeatureVector> {
    let x = &rr.intervals_ms;
    if x.len() < MIN_NONLINEAR_INTERVALS {
        return Err(Error::TooFewIntervals {
            needed: MIN_NONLINEAR_INTERVALS,
            got: x.len(),
        });
    }
    let mut flags = rr.flags;
    let mut values = Vec::with_capacity(NONLINEAR_FEATURES.len());
    values.extend(poincare(x, &mut flags));
    values.extend(fragmentation(x, &mut flags));
    values.extend(asymmetry(x, &mut flags));
    values.push(dfa_alpha1(x).unwrap_or_else(|| {
        flags |= QualityFlags::DFA_UNDEFINED;
        0.0
    }));
    let r = TOLERANCE_FACTOR * variance(x, 1).sqrt();
    let mut entropy = |v: Option<f64>| {
        v.filter(|v| v.is_finite()).unwrap_or_else(|| {
            flags |= QualityFlags::ENTROPY_UNDEFINED;
            0.0
        })
    };
    let apen = entropy((r > 0.0).then(|| approximate_entropy(x, EMBED_M, r)));
    let sampen = entropy(if r > 0.0 { sample_entropy(x, EMBED_M, r) } else { None });
    let shanen = entropy(shannon_entropy(x));
    let fuzzyen = entropy(if r > 0.0 { fuzzy_entropy(x, EMBED_M, r) } else { None });
    values.extend([apen, sampen, shanen, fuzzyen]);
    values.push(lempel_ziv(x));
    let mut fractal = |v: Option<f64>| {
        v.filter(|v| v.is_finite()).unwrap_or_else(|| {
            flags |= QualityFlags::FRACTAL_UNDEFINED;
            0.0
        })
    };
    let hfd = fractal(higuchi(x, HIGUCHI_KMAX));
    let kfd = fractal(katz(x));
    values.extend([hfd, kfd]);
    Ok(FeatureVector::from_parts(&NONLINEAR_FEATURES, values, Domain::Nonlinear, flags))
}

fn poincare(x: &[f64], flags: &mut QualityFlags) -> [f64; 7] {
    let sq: Vec<f64> = x.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).collect();
    let sd1 = (0.5 * mean(&sq)).sqrt();
    let sd2 = (2.0 * variance(x, 0) - sd1 * sd1).max(0.0).sqrt();
    let (s, cvi) = (PI * sd1 * sd2, (16.0 * sd1 * sd2).log10());
    if sd1 > 0.0 && sd2 > 0.0 {
        [sd1, sd2, sd1 / sd2, s, sd2 / sd1, cvi, sd2 * sd2 / sd1]
    } else {
        *flags |= QualityFlags::POINCARE_DEGENERATE;
        let ratio = if sd1 > 0.0 { sd2 / sd1 } else { 0.0 };
        let modified = if sd1 > 0.0 { sd2 * sd2 / sd1 } else { 0.0 };
        let sd12 = if sd2 > 0.0 { sd1 / sd2 } else { 0.0 };
        [sd1, sd2, sd12, s, ratio, 0.0, modified]
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn fragmentation(x: &[f64], flags: &mut QualityFlags) -> [f64; 4] {
    let s: Vec<i8> = x.windows(2).map(|w| sign(w[1] - w[0])).collect();
    let nd = s.len();
    let inflections = s.windows(2).filter(|w| w[0] as i16 * w[1] as i16 == -1).count();
    let pip = inflections as f64 / x.len() as f64;

    let mut runs = Vec::new();
    let mut i = 0;
    while i < nd {
        if s[i] == 0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < nd && s[i] == s[start] {
            i += 1;
        }
        runs.push(i - start);
    }
    let (ials, pss) = if runs.is_empty() {
        *flags |= QualityFlags::FRAGMENTATION_UNDEFINED;
        (0.0, 0.0)
    } else {
        let total: usize = runs.iter().sum();
        let short: usize = runs.iter().filter(|&&l| l < 3).sum();
        (runs.len() as f64 / total as f64, short as f64 / total as f64)
    };

    let mut in_alternation = 0usize;
    let mut i = 0;
    while i < nd {
        let start = i;
        i += 1;
        while i < nd && s[i] as i16 * s[i - 1] as i16 == -1 {
            i += 1;
        }
        if i - start >= 4 {
            in_alternation += i - start;
        }
    }
    [pip, ials, pss, in_alternation as f64 / nd as f64]
}

fn asymmetry(x: &[f64], flags: &mut QualityFlags) -> [f64; 16] {
    let px = &x[..x.len() - 1];
    let py = &x[1..];
    let p = px.len() as f64;
    let (cx, cy) = (mean(px), mean(py));
    let mut dist_sum = [0.0; 2];
    let mut theta_sum = [0.0; 2];
    let mut area_sum = [0.0; 2];
    let mut sd1_sq = [0.0; 2];
    let mut sd2_sq = [0.0; 2];
    let mut on_line_sd2 = 0.0;
    let mut count = [0usize; 2];
    for (&a, &b) in px.iter().zip(py) {
        let d = b - a;
        let dist = d.abs() * FRAC_1_SQRT_2;
        let dist_l2 = ((a - cx) + (b - cy)).abs() * FRAC_1_SQRT_2;
        if d == 0.0 {
            on_line_sd2 += dist_l2 * dist_l2;
            continue;
        }
        let side = usize::from(d < 0.0);
        let theta = (FRAC_PI_4 - (b / a).atan()).abs();
        dist_sum[side] += dist;
        theta_sum[side] += theta;
        area_sum[side] += 0.5 * theta * (a * a + b * b);
        sd1_sq[side] += dist * dist;
        sd2_sq[side] += dist_l2 * dist_l2;
        count[side] += 1;
    }
    let share = |v: [f64; 2]| {
        let t = v[0] + v[1];
        if t > 0.0 {
            100.0 * v[0] / t
        } else {
            f64::NAN
        }
    };
    let off_line = count[0] + count[1];
    let pi = if off_line > 0 {
        100.0 * count[1] as f64 / off_line as f64
    } else {
        f64::NAN
    };
    let sd1d2 = sd1_sq[0] / p;
    let sd1a2 = sd1_sq[1] / p;
    let sd2d2 = (sd2_sq[0] + 0.5 * on_line_sd2) / p;
    let sd2a2 = (sd2_sq[1] + 0.5 * on_line_sd2) / p;
    let sdnnd2 = 0.5 * (sd1d2 + sd2d2);
    let sdnna2 = 0.5 * (sd1a2 + sd2a2);
    let frac = |a: f64, b: f64| if a + b > 0.0 { a / (a + b) } else { f64::NAN };
    let out = [
        share(dist_sum),
        share(theta_sum),
        share(area_sum),
        pi,
        frac(sd1d2, sd1a2),
        frac(sd1a2, sd1d2),
        sd1d2.sqrt(),
        sd1a2.sqrt(),
        frac(sd2d2, sd2a2),
        frac(sd2a2, sd2d2),
        sd2d2.sqrt(),
        sd2a2.sqrt(),
        frac(sdnnd2, sdnna2),
        frac(sdnna2, sdnnd2),
        sdnnd2.sqrt(),
        sdnna2.sqrt(),
    ];
    out.map(|v| {
        if v.is_finite() {
            v
        } else {
            *flags |= QualityFlags::ASYMMETRY_UNDEFINED;
            0.0
        }
    })
}

pub(crate) fn dfa_alpha1(x: &[f64]) -> Option<f64> {
    if x.len() < 2 * DFA_MAX_BOX {
        return None;
    }
    let m = mean(x);
    let mut y = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for v in x {
        acc += v - m;
        y.push(acc);
    }
    let mut log_n = Vec::new();
    let mut log_f = Vec::new();
    for n in DFA_MIN_BOX..=DFA_MAX_BOX {
        let boxes = y.len() / n;
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let tm = mean(&t);
        let tvar: f64 = t.iter().map(|v| (v - tm) * (v - tm)).sum();
        let mut ss = 0.0;
        for b in 0..boxes {
            let seg = &y[b * n..(b + 1) * n];
            let sm = mean(seg);
            let k = t.iter().zip(seg).map(|(a, s)| (a - tm) * (s - sm)).sum::<f64>() / tvar;
            ss += t
                .iter()
                .zip(seg)
                .map(|(a, s)| {
                    let r = s - (sm + k * (a - tm));
                    r * r
                })
                .sum::<f64>();
        }
        let f = (ss / (boxes * n) as f64).sqrt();
        if !(f > 0.0) {
            return None;
        }
        log_n.push((n as f64).ln());
        log_f.push(f.ln());
    }
    Some(slope(&log_n, &log_f))
}

fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (p, q)| m.max((p - q).abs()))
}

pub(crate) fn sample_entropy(x: &[f64], m: usize, r: f64) -> Option<f64> {
    let k = x.len().checked_sub(m)?;
    let (mut a, mut b) = (0u64, 0u64);
    for i in 0..k {
        for j in i + 1..k {
            if chebyshev(&x[i..i + m], &x[j..j + m]) <= r {
                b += 1;
                if (x[i + m] - x[j + m]).abs() <= r {
                    a += 1;
                }
            }
        }
    }
    (a > 0 && b > 0).then(|| -(a as f64 / b as f64).ln())
}

pub(crate) fn approximate_entropy(x: &[f64], m: usize, r: f64) -> f64 {
    let phi = |mm: usize| {
        let k = x.len() - mm + 1;
        (0..k)
            .map(|i| {
                let c = (0..k).filter(|&j| chebyshev(&x[i..i + mm], &x[j..j + mm]) <= r).count();
                (c as f64 / k as f64).ln()
            })
            .sum::<f64>()
            / k as f64
    };
    phi(m) - phi(m + 1)
}

pub(crate) fn fuzzy_entropy(x: &[f64], m: usize, r: f64) -> Option<f64> {
    let k = x.len().checked_sub(m)?;
    if k < 2 {
        return None;
    }
    let phi = |mm: usize| {
        let templates: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let t = &x[i..i + mm];
                let tm = mean(t);
                t.iter().map(|v| v - tm).collect()
            })
            .collect();
        let mut total = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                let d = chebyshev(&templates[i], &templates[j]);
                total += 2.0 * (-(d / r).powi(2)).exp();
            }
        }
        total / (k * (k - 1)) as f64
    };
    let (pm, pm1) = (phi(m), phi(m + 1));
    (pm > 0.0 && pm1 > 0.0).then(|| pm.ln() - pm1.ln())
}

fn shannon_entropy(x: &[f64]) -> Option<f64> {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi <= lo {
        return None;
    }
    let width = (hi - lo) / SHANNON_BINS as f64;
    let mut counts = [0usize; SHANNON_BINS];
    for v in x {
        let i = (((v - lo) / width).floor() as usize).min(SHANNON_BINS - 1);
        counts[i] += 1;
    }
    let n = x.len() as f64;
    Some(
        -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.log2()
            })
            .sum::<f64>(),
    )
}

/// Kaspar-Schuster phrase counting for LZ76.
pub(crate) fn lz76_phrases(s: &[u8]) -> usize {
    let n = s.len();
    if n < 2 {
        return n;
    }
    let (mut u, mut v, mut w, mut v_max, mut c) = (0usize, 1usize, 1usize, 1usize, 1usize);
    loop {
        if s[u + v - 1] == s[w + v - 1] {
            v += 1;
            if w + v > n {
                c += 1;
                break;
            }
        } else {
            v_max = v_max.max(v);
            u += 1;
            if u == w {
                c += 1;
                w += v_max;
                if w >= n {
                    break;
                }
                u = 0;
                v = 1;
                v_max = 1;
            } else {
                v = 1;
            }
        }
    }
    c
}

fn lempel_ziv(x: &[f64]) -> f64 {
    let med = median(x);
    let bits: Vec<u8> = x.iter().map(|&v| u8::from(v > med)).collect();
    let n = bits.len() as f64;
    lz76_phrases(&bits) as f64 * n.log2() / n
}

pub(crate) fn higuchi(x: &[f64], kmax: usize) -> Option<f64> {
    let n = x.len();
    let kmax = kmax.min(n / 2);
    if kmax < 2 {
        return None;
    }
    let mut log_inv_k = Vec::with_capacity(kmax);
    let mut log_l = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        let mut sum = 0.0;
        let mut used = 0usize;
        for m in 0..k {
            let count = (n - 1 - m) / k;
            if count == 0 {
                continue;
            }
            let len: f64 = (1..=count).map(|i| (x[m + i * k] - x[m + (i - 1) * k]).abs()).sum();
            sum += len * (n - 1) as f64 / (count * k) as f64 / k as f64;
            used += 1;
        }
        let l = sum / used as f64;
        if !(l > 0.0) {
            return None;
        }
        log_inv_k.push((1.0 / k as f64).ln());
        log_l.push(l.ln());
    }
    Some(slope(&log_inv_k, &log_l))
}

pub(crate) fn katz(x: &[f64]) -> Option<f64> {
    let steps: Vec<f64> = x.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let l: f64 = steps.iter().sum();
    let a = mean(&steps);
    let d = x.iter().fold(0.0f64, |m, v| m.max((v - x[0]).abs()));
    if !(l > 0.0 && d > 0.0) {
        return None;
    }
    let ln = (l / a).log10();
    Some(ln / (ln + (d / l).log10()))
}
