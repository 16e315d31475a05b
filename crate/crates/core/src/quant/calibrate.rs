//! Activation range calibration.
//!
//! Windows are processed in fixed batches of [`CALIBRATION_BATCH`]. The
//! first batch sets each tensor's (min, max); later batches blend in with an
//! exponential moving average, `r ← m · r + (1 − m) · r_batch`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::QuantParams;
use crate::error::{Error, Result};
use crate::slcnn::engine::{BnStats, DropoutMode, Trace};
use crate::slcnn::Network;

pub const MIN_CALIBRATION_WINDOWS: usize = 64;
pub const CALIBRATION_BATCH: usize = 32;
pub const CALIBRATION_MOMENTUM: f64 = 0.9;

/// Activation parameters for the network input (`activations[0]`) and the
/// output of every layer (`activations[i + 1]` for layer `i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub activations: Vec<QuantParams>,
}

type Ranges = Vec<(f64, f64)>;

fn window_ranges(net: &Network<f32>, x: &[f32], tr: &mut Trace<f32>) -> Result<Ranges> {
    let bn = BnStats::from_moments(net.running_mean, net.running_var);
    net.forward_trace(x, bn, DropoutMode::Off, 0, tr)?;
    let range = |v: &[f32]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a as f64), hi.max(a as f64)))
    };
    let mut out = Vec::with_capacity(tr.acts.len() + 1);
    out.push(range(x));
    out.extend(tr.acts.iter().map(|a| range(a)));
    Ok(out)
}

fn merge(a: Ranges, b: Ranges) -> Ranges {
    a.into_iter().zip(b).map(|(x, y)| (x.0.min(y.0), x.1.max(y.1))).collect()
}

pub fn calibrate(net: &Network<f32>, windows: &[&[f32]]) -> Result<Calibration> {
    if windows.is_empty() {
        return Err(Error::Quantization("empty calibration set".into()));
    }
    if windows.len() < MIN_CALIBRATION_WINDOWS {
        return Err(Error::Quantization(format!(
            "calibration needs at least {MIN_CALIBRATION_WINDOWS} windows, got {}",
            windows.len()
        )));
    }
    let mut ema: Option<Ranges> = None;
    for batch in windows.chunks(CALIBRATION_BATCH) {
        let ranges = batch
            .par_iter()
            .map_init(|| Trace::new(net), |tr, x| window_ranges(net, x, tr))
            .try_reduce_with(|a, b| Ok(merge(a, b)))
            .expect("batch is non-empty")?;
        ema = Some(match ema {
            None => ranges,
            Some(prev) => prev
                .into_iter()
                .zip(ranges)
                .map(|(p, r)| {
                    let m = CALIBRATION_MOMENTUM;
                    (m * p.0 + (1.0 - m) * r.0, m * p.1 + (1.0 - m) * r.1)
                })
                .collect(),
        });
    }
    let activations = ema
        .unwrap()
        .into_iter()
        .map(|(lo, hi)| QuantParams::asymmetric(lo, hi))
        .collect::<Result<_>>()?;
    Ok(Calibration { activations })
}
