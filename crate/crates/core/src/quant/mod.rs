//! 8-bit affine quantization of a trained [`Network`](crate::Network).
//!
//! A real value `r` is stored as an int8 code `q` with
//! `r ≈ scale · (q − zero_point)`. Weights are symmetric per tensor
//! (`zero_point = 0`, `scale = max|w| / 127`); activations are asymmetric
//! per tensor with ranges from a calibration pass. Rounding is half away
//! from zero everywhere.
//!
//! Integer inference multiplies int8 by int8 into an int32 accumulator and
//! rescales between layers with a fixed-point multiplier: the real ratio
//! `M = s_in · s_w / s_out` is stored as a Q31 mantissa `m0 ∈ [2³⁰, 2³¹)`
//! and a right shift `n`, so that `M ≈ m0 · 2⁻ⁿ`.
//!
//! The input batch-norm is an affine map of a single channel, so it is
//! folded into the input quantizer rather than into the first convolution
//! (zero padding would otherwise stop being exact at the window edges).

mod calibrate;
mod export;
mod network;
mod qat;

pub use calibrate::{calibrate, Calibration, CALIBRATION_BATCH, CALIBRATION_MOMENTUM, MIN_CALIBRATION_WINDOWS};
pub use export::{
    load_quantized, read_quantized_bytes, save_quantized, write_quantized_bytes, QUANT_MAGIC, QUANT_VERSION,
};
pub use network::{quantize, QConv, QDense, QLayer, QuantizedNetwork, MAX_ACCUMULATED_MACS};
pub use qat::{qat_finetune, QatConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QMIN: i32 = -128;
pub const QMAX: i32 = 127;

/// Rounds to the nearest integer, ties away from zero.
#[inline]
pub fn round_half_away(v: f64) -> i64 {
    v.round() as i64
}

/// Per-tensor affine quantization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    /// Observed range the parameters were derived from.
    pub min: f64,
    pub max: f64,
}

impl QuantParams {
    /// Asymmetric parameters covering `[min, max]` widened to contain zero.
    /// A range collapsed onto zero gets scale 1 so that zero stays exact.
    pub fn asymmetric(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || min > max {
            return Err(Error::Quantization(format!("invalid range [{min}, {max}]")));
        }
        let lo = min.min(0.0);
        let hi = max.max(0.0);
        if hi == lo {
            return Ok(QuantParams { scale: 1.0, zero_point: 0, min, max });
        }
        let scale = (hi - lo) / (QMAX - QMIN) as f64;
        let zero_point = (QMIN as i64 - round_half_away(lo / scale)).clamp(QMIN as i64, QMAX as i64) as i32;
        Ok(QuantParams { scale, zero_point, min, max })
    }

    /// Symmetric parameters for a tensor, `scale = max|v| / 127`.
    pub fn symmetric(values: &[f64]) -> Result<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            if !v.is_finite() {
                return Err(Error::Quantization("non-finite weight".into()));
            }
            min = min.min(v);
            max = max.max(v);
        }
        let absmax = min.abs().max(max.abs());
        if values.is_empty() || absmax == 0.0 {
            return Err(Error::Quantization("zero scale: tensor is all zeros".into()));
        }
        Ok(QuantParams {
            scale: absmax / QMAX as f64,
            zero_point: 0,
            min,
            max,
        })
    }

    #[inline]
    pub fn quantize(&self, v: f64) -> i8 {
        (round_half_away(v / self.scale) + self.zero_point as i64).clamp(QMIN as i64, QMAX as i64) as i8
    }

    #[inline]
    pub fn dequantize(&self, q: i8) -> f64 {
        self.scale * (q as i32 - self.zero_point) as f64
    }

    /// Smallest and largest representable real values.
    pub fn representable(&self) -> (f64, f64) {
        (self.dequantize(QMIN as i8), self.dequantize(QMAX as i8))
    }
}

/// Fixed-point form of a positive real multiplier: `m0 · 2^-shift`.
pub fn quantize_multiplier(m: f64) -> Result<(i32, u32)> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::Quantization(format!("requantization multiplier {m} must be positive")));
    }
    let mut e = m.log2().floor() as i32 + 1;
    let mut frac = m / 2f64.powi(e);
    // guard against log2 rounding at exact powers of two
    while frac >= 1.0 {
        frac /= 2.0;
        e += 1;
    }
    while frac < 0.5 {
        frac *= 2.0;
        e -= 1;
    }
    let mut m0 = round_half_away(frac * (1u64 << 31) as f64);
    if m0 == 1 << 31 {
        m0 = 1 << 30;
        e += 1;
    }
    let shift = 31 - e;
    if !(1..=62).contains(&shift) {
        return Err(Error::Quantization(format!(
            "requantization multiplier {m} outside the fixed-point range"
        )));
    }
    Ok((m0 as i32, shift as u32))
}

/// `round_half_away(acc · m0 / 2^shift)` in 64-bit integer arithmetic.
#[inline]
pub fn requantize(acc: i32, m0: i32, shift: u32) -> i64 {
    let p = acc as i64 * m0 as i64;
    let half = 1i64 << (shift - 1);
    if p >= 0 {
        (p + half) >> shift
    } else {
        -((-p + half) >> shift)
    }
}
