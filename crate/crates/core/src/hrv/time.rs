//! Time-domain NN statistics.
//!
//! | name | definition |
//! |---|---|
//! | MeanNN | mean interval |
//! | SDNN | sample standard deviation (n − 1) |
//! | RMSSD | root mean square of successive differences |
//! | SDSD | sample standard deviation of successive differences |
//! | CVNN | SDNN / MeanNN |
//! | CVSD | RMSSD / MeanNN |
//! | MedianNN | median |
//! | MadNN | 1.4826 · median absolute deviation from the median |
//! | MCVNN | MadNN / MedianNN |
//! | IQRNN | 75th − 25th percentile |
//! | Prc20NN, Prc80NN | 20th and 80th percentiles |
//! | pNN50, pNN20 | % of \|successive differences\| strictly above 50 / 20 ms |
//! | MinNN, MaxNN | extremes |
//! | HTI | n / tallest bin of the histogram |
//! | TINN | base width of the best least-squares triangle over the histogram |
//!
//! Percentiles interpolate linearly between order statistics at position
//! p/100 · (n − 1). The histogram uses 7.8125 ms bins starting at MinNN; bin
//! `i` covers [MinNN + i·w, MinNN + (i+1)·w).
//!
//! TINN: with X the first tallest bin and Y its count, a triangle is zero at
//! bin positions N and M, peaks at Y on X, and is linear in between. All
//! N ∈ {−1, …, X − 1} and M ∈ {X + 1, …, nbins} are tried (N ascending, then
//! M ascending, first strict minimum kept) and the squared error is summed
//! over the real bins. TINN = (M − N) · w.

use super::stats::{mean, percentile_sorted, sorted, variance};
use super::{Domain, FeatureVector, QualityFlags, RrSeries};
use crate::error::{Error, Result};

pub const TIME_FEATURES: [&str; 18] = [
    "MeanNN", "SDNN", "RMSSD", "SDSD", "CVNN", "CVSD", "MedianNN", "MadNN", "MCVNN", "IQRNN", "Prc20NN",
    "Prc80NN", "pNN50", "pNN20", "MinNN", "MaxNN", "HTI", "TINN",
];

/// Histogram bin width in milliseconds (1/128 s).
pub const HIST_BIN_MS: f64 = 1000.0 / 128.0;

pub fn time_features(rr: &RrSeries) -> Result<FeatureVector> {
    let x = &rr.intervals_ms;
    if x.len() < 3 {
        return Err(Error::TooFewIntervals { needed: 3, got: x.len() });
    }
    let mut flags = rr.flags;
    let n = x.len() as f64;
    let diffs: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_nn = mean(x);
    let sdnn = variance(x, 1).sqrt();
    let rmssd = mean(&diffs.iter().map(|d| d * d).collect::<Vec<_>>()).sqrt();
    let sdsd = variance(&diffs, 1).sqrt();
    let s = sorted(x);
    let median = percentile_sorted(&s, 50.0);
    let abs_dev = sorted(&x.iter().map(|v| (v - median).abs()).collect::<Vec<_>>());
    let mad = 1.4826 * percentile_sorted(&abs_dev, 50.0);
    let pnn = |thr: f64| 100.0 * diffs.iter().filter(|d| d.abs() > thr).count() as f64 / diffs.len() as f64;
    let (min, max) = (s[0], s[s.len() - 1]);
    if min == max {
        flags |= QualityFlags::ZERO_VARIANCE;
    }
    let hist = histogram(x, min, max);
    let tallest = *hist.iter().max().unwrap();
    let values = vec![
        mean_nn,
        sdnn,
        rmssd,
        sdsd,
        sdnn / mean_nn,
        rmssd / mean_nn,
        median,
        mad,
        mad / median,
        percentile_sorted(&s, 75.0) - percentile_sorted(&s, 25.0),
        percentile_sorted(&s, 20.0),
        percentile_sorted(&s, 80.0),
        pnn(50.0),
        pnn(20.0),
        min,
        max,
        n / tallest as f64,
        tinn(&hist),
    ];
    Ok(FeatureVector::from_parts(&TIME_FEATURES, values, Domain::Time, flags))
}

fn histogram(x: &[f64], min: f64, max: f64) -> Vec<usize> {
    let bins = ((max - min) / HIST_BIN_MS).floor() as usize + 1;
    let mut h = vec![0usize; bins];
    for v in x {
        let i = (((v - min) / HIST_BIN_MS).floor() as usize).min(bins - 1);
        h[i] += 1;
    }
    h
}

fn tinn(hist: &[usize]) -> f64 {
    let nbins = hist.len() as i64;
    let (x, y) = hist
        .iter()
        .enumerate()
        .fold((0usize, 0usize), |best, (i, &c)| if c > best.1 { (i, c) } else { best });
    let (x, y) = (x as i64, y as f64);
    let mut best = (f64::INFINITY, 0i64);
    for n in -1..x {
        for m in x + 1..=nbins {
            let mut err = 0.0;
            for (i, &c) in hist.iter().enumerate() {
                let i = i as i64;
                let q = if i > n && i <= x {
                    y * (i - n) as f64 / (x - n) as f64
                } else if i > x && i < m {
                    y * (m - i) as f64 / (m - x) as f64
                } else {
                    0.0
                };
                err += (c as f64 - q) * (c as f64 - q);
            }
            if err < best.0 {
                best = (err, m - n);
            }
        }
    }
    best.1 as f64 * HIST_BIN_MS
}
