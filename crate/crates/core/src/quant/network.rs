//! Quantized network and the pure-integer inference path.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{quantize_multiplier, requantize, round_half_away, Calibration, QuantParams, QMAX, QMIN};
use crate::class::{ApneaClass, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::slcnn::{LayerSpec, Network, BN_EPS};

/// Largest number of products summed into one int32 accumulator:
/// 2¹⁵ · 255 · 127 plus a bias of at most 2³⁰ stays below 2³¹.
pub const MAX_ACCUMULATED_MACS: usize = 1 << 15;
const MAX_BIAS: i64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QConv {
    /// Index of the float layer this was built from.
    pub source: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub len: usize,
    /// `[out_ch][in_ch][kernel]`.
    pub weights: Vec<i8>,
    pub weight: QuantParams,
    /// Stored at scale `input.scale · weight.scale`.
    pub bias: Vec<i32>,
    pub input: QuantParams,
    pub output: QuantParams,
    pub multiplier: i32,
    pub shift: u32,
    pub fused_relu: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QDense {
    pub source: usize,
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs][inputs]`.
    pub weights: Vec<i8>,
    pub weight: QuantParams,
    pub bias: Vec<i32>,
    pub input: QuantParams,
    /// Real value of one accumulator unit, `input.scale · weight.scale`.
    pub output_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QLayer {
    Conv(QConv),
    Relu { zero_point: i32 },
    MaxPool { size: usize },
    Dense(QDense),
}

/// Int8 twin of a float network; dropout and flatten vanish because they
/// are identities at inference time on a channel-major layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedNetwork {
    pub input_len: usize,
    pub topology: Vec<LayerSpec>,
    /// Folded input batch-norm `y = a · x + b`; `(1, 0)` without one.
    pub input_affine: (f64, f64),
    pub input: QuantParams,
    pub layers: Vec<QLayer>,
}

fn quantize_bias(b: f32, scale: f64) -> Result<i32> {
    let q = round_half_away(b as f64 / scale);
    if q.abs() > MAX_BIAS {
        return Err(Error::Quantization(format!("bias {b} overflows at scale {scale:e}")));
    }
    Ok(q as i32)
}

fn weight_tensor(w: &[f32]) -> Result<(QuantParams, Vec<i8>)> {
    let wf: Vec<f64> = w.iter().map(|&v| v as f64).collect();
    let p = QuantParams::symmetric(&wf)?;
    Ok((p, wf.iter().map(|&v| p.quantize(v)).collect()))
}

/// Builds the int8 network from a float network and its calibration.
pub fn quantize(net: &Network<f32>, calib: &Calibration) -> Result<QuantizedNetwork> {
    let n = net.layers.len();
    if calib.activations.len() != n + 1 {
        return Err(Error::Quantization(format!(
            "calibration covers {} tensors, network has {}",
            calib.activations.len(),
            n + 1
        )));
    }
    let act = |k: usize| calib.activations[k];
    let (input_affine, input, start) = if net.has_input_batchnorm() {
        let a = net.weight(0)[0] as f64 / (net.running_var as f64 + BN_EPS).sqrt();
        let b = net.bias(0)[0] as f64 - a * net.running_mean as f64;
        ((a, b), act(1), 1)
    } else {
        ((1.0, 0.0), act(0), 0)
    };
    let mut cur = input;
    let mut layers = Vec::new();
    let mut i = start;
    while i < n {
        match net.layers[i] {
            LayerSpec::InputBatchnorm => {
                return Err(Error::Quantization("batch-norm is only supported as the first layer".into()))
            }
            LayerSpec::Conv1d { in_ch, out_ch, kernel } => {
                if in_ch * kernel > MAX_ACCUMULATED_MACS {
                    return Err(Error::Quantization(format!(
                        "layer {i}: {} products per output would overflow the int32 accumulator",
                        in_ch * kernel
                    )));
                }
                let fused_relu = net.layers.get(i + 1) == Some(&LayerSpec::Relu);
                let output = if fused_relu { act(i + 2) } else { act(i + 1) };
                let (weight, weights) = weight_tensor(net.weight(i))?;
                let acc_scale = cur.scale * weight.scale;
                let bias = net.bias(i).iter().map(|&b| quantize_bias(b, acc_scale)).collect::<Result<_>>()?;
                let (multiplier, shift) = quantize_multiplier(acc_scale / output.scale)?;
                layers.push(QLayer::Conv(QConv {
                    source: i,
                    in_ch,
                    out_ch,
                    kernel,
                    len: net.shapes[i].len,
                    weights,
                    weight,
                    bias,
                    input: cur,
                    output,
                    multiplier,
                    shift,
                    fused_relu,
                }));
                cur = output;
                if fused_relu {
                    i += 1;
                }
            }
            LayerSpec::Relu => layers.push(QLayer::Relu {
                zero_point: cur.zero_point,
            }),
            LayerSpec::Maxpool1d { size } => layers.push(QLayer::MaxPool { size }),
            LayerSpec::Dropout { .. } | LayerSpec::Flatten => {}
            LayerSpec::Dense { inputs, outputs } => {
                if net.layers.get(i + 1) != Some(&LayerSpec::Softmax) {
                    return Err(Error::Quantization(format!(
                        "layer {i}: only a dense layer feeding the softmax is supported"
                    )));
                }
                if inputs > MAX_ACCUMULATED_MACS {
                    return Err(Error::Quantization(format!(
                        "layer {i}: {inputs} products per output would overflow the int32 accumulator"
                    )));
                }
                let (weight, weights) = weight_tensor(net.weight(i))?;
                let output_scale = cur.scale * weight.scale;
                let bias = net.bias(i).iter().map(|&b| quantize_bias(b, output_scale)).collect::<Result<_>>()?;
                layers.push(QLayer::Dense(QDense {
                    source: i,
                    inputs,
                    outputs,
                    weights,
                    weight,
                    bias,
                    input: cur,
                    output_scale,
                }));
            }
            LayerSpec::Softmax => {}
        }
        i += 1;
    }
    Ok(QuantizedNetwork {
        input_len: net.input_len(),
        topology: net.layers.clone(),
        input_affine,
        input,
        layers,
    })
}

fn softmax(logits: &[f64]) -> [f64; NUM_CLASSES] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    std::array::from_fn(|c| e[c] / s)
}

fn argmax(p: &[f64; NUM_CLASSES]) -> ApneaClass {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if p[c] > p[best] {
            best = c;
        }
    }
    ApneaClass::ALL[best]
}

/// Output position range `[l0, l1)` reading input `l + t − pad_l`.
fn valid_range(len: usize, pad_l: usize, t: usize) -> (usize, usize, usize) {
    let l0 = pad_l.saturating_sub(t);
    let l1 = (len + pad_l).saturating_sub(t).min(len).max(l0);
    (l0, l1, l0 + t - pad_l)
}

impl QConv {
    /// Integer accumulators `bias + Σ w · (x − zp)`, `[out_ch][len]`.
    pub fn accumulate(&self, x: &[i8]) -> Vec<i32> {
        let len = self.len;
        let zp = self.input.zero_point;
        let xs: Vec<i32> = x.iter().map(|&v| v as i32 - zp).collect();
        let pad_l = (self.kernel - 1) / 2;
        let mut acc = vec![0i32; self.out_ch * len];
        for o in 0..self.out_ch {
            let row = &mut acc[o * len..(o + 1) * len];
            row.fill(self.bias[o]);
            for c in 0..self.in_ch {
                let inp = &xs[c * len..(c + 1) * len];
                let base = (o * self.in_ch + c) * self.kernel;
                for t in 0..self.kernel {
                    let w = self.weights[base + t] as i32;
                    let (l0, l1, s0) = valid_range(len, pad_l, t);
                    for (r, v) in row[l0..l1].iter_mut().zip(&inp[s0..s0 + (l1 - l0)]) {
                        *r += w * v;
                    }
                }
            }
        }
        acc
    }

    fn lower_clamp(&self) -> i64 {
        if self.fused_relu {
            self.output.zero_point.max(QMIN) as i64
        } else {
            QMIN as i64
        }
    }

    pub fn forward(&self, x: &[i8]) -> Vec<i8> {
        let lo = self.lower_clamp();
        self.accumulate(x)
            .into_iter()
            .map(|a| {
                (requantize(a, self.multiplier, self.shift) + self.output.zero_point as i64).clamp(lo, QMAX as i64)
                    as i8
            })
            .collect()
    }
}

impl QDense {
    pub fn accumulate(&self, x: &[i8]) -> Vec<i32> {
        let zp = self.input.zero_point;
        let xs: Vec<i32> = x.iter().map(|&v| v as i32 - zp).collect();
        (0..self.outputs)
            .map(|o| {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + w.iter().zip(&xs).map(|(&a, &b)| a as i32 * b).sum::<i32>()
            })
            .collect()
    }
}

fn maxpool(x: &[i8], size: usize) -> Vec<i8> {
    x.chunks_exact(size).map(|c| *c.iter().max().unwrap()).collect()
}

impl QuantizedNetwork {
    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.input_len {
            return Err(Error::InvalidArgument(format!(
                "window has {} samples, network expects {}",
                x.len(),
                self.input_len
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation { layer: 0 });
        }
        Ok(())
    }

    /// Applies the folded batch-norm and the input quantizer.
    pub fn quantize_input(&self, x: &[f32]) -> Result<Vec<i8>> {
        self.check_input(x)?;
        let (a, b) = self.input_affine;
        Ok(x.iter().map(|&v| self.input.quantize(a * v as f64 + b)).collect())
    }

    /// Final-layer accumulators of the integer path, before dequantization.
    pub fn infer_accumulators(&self, x: &[f32]) -> Result<Vec<i32>> {
        let mut h = self.quantize_input(x)?;
        for layer in &self.layers {
            match layer {
                QLayer::Conv(c) => h = c.forward(&h),
                QLayer::Relu { zero_point } => {
                    let z = (*zero_point).clamp(QMIN, QMAX) as i8;
                    h.iter_mut().for_each(|v| *v = (*v).max(z));
                }
                QLayer::MaxPool { size } => h = maxpool(&h, *size),
                QLayer::Dense(d) => return Ok(d.accumulate(&h)),
            }
        }
        Err(Error::Quantization("network has no output layer".into()))
    }

    fn output_scale(&self) -> f64 {
        match self.layers.last() {
            Some(QLayer::Dense(d)) => d.output_scale,
            _ => 1.0,
        }
    }

    /// Class probabilities from the integer path; only the final logits
    /// are dequantized.
    pub fn infer(&self, x: &[f32]) -> Result<[f64; NUM_CLASSES]> {
        let s = self.output_scale();
        let logits: Vec<f64> = self.infer_accumulators(x)?.iter().map(|&a| a as f64 * s).collect();
        Ok(softmax(&logits))
    }

    pub fn predict_proba(&self, xs: &[&[f32]]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        xs.par_iter().map(|x| self.infer(x)).collect()
    }

    pub fn predict(&self, xs: &[&[f32]]) -> Result<Vec<ApneaClass>> {
        Ok(self.predict_proba(xs)?.iter().map(argmax).collect())
    }

    /// Float simulation of the quantized network: dequantized weights and
    /// activations, with each requantization done by a real-valued divide
    /// instead of the fixed-point multiplier.
    pub fn reference_forward(&self, x: &[f32]) -> Result<[f64; NUM_CLASSES]> {
        self.check_input(x)?;
        let (a, b) = self.input_affine;
        let mut h: Vec<f64> = x
            .iter()
            .map(|&v| self.input.dequantize(self.input.quantize(a * v as f64 + b)))
            .collect();
        for layer in &self.layers {
            match layer {
                QLayer::Conv(c) => {
                    let len = c.len;
                    let pad_l = (c.kernel - 1) / 2;
                    let bias_scale = c.input.scale * c.weight.scale;
                    let mut out = vec![0.0; c.out_ch * len];
                    for o in 0..c.out_ch {
                        for l in 0..len {
                            let mut s = c.bias[o] as f64 * bias_scale;
                            for ch in 0..c.in_ch {
                                for t in 0..c.kernel {
                                    let pos = l as isize + t as isize - pad_l as isize;
                                    if pos >= 0 && (pos as usize) < len {
                                        let w = c.weight.dequantize(c.weights[(o * c.in_ch + ch) * c.kernel + t]);
                                        s += w * h[ch * len + pos as usize];
                                    }
                                }
                            }
                            if c.fused_relu {
                                s = s.max(0.0);
                            }
                            out[o * len + l] = c.output.dequantize(c.output.quantize(s));
                        }
                    }
                    h = out;
                }
                QLayer::Relu { .. } => h.iter_mut().for_each(|v| *v = v.max(0.0)),
                QLayer::MaxPool { size } => {
                    h = h.chunks_exact(*size).map(|c| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect()
                }
                QLayer::Dense(d) => {
                    let bias_scale = d.output_scale;
                    let logits: Vec<f64> = (0..d.outputs)
                        .map(|o| {
                            let w = &d.weights[o * d.inputs..(o + 1) * d.inputs];
                            d.bias[o] as f64 * bias_scale
                                + w.iter().zip(&h).map(|(&q, v)| d.weight.dequantize(q) * v).sum::<f64>()
                        })
                        .collect();
                    return Ok(softmax(&logits));
                }
            }
        }
        Err(Error::Quantization("network has no output layer".into()))
    }

    /// Dequantized copy of the int8 weights of float layer `source`.
    pub fn dequantized_weights(&self, source: usize) -> Option<Vec<f64>> {
        self.layers.iter().find_map(|l| match l {
            QLayer::Conv(c) if c.source == source => Some(c.weights.iter().map(|&q| c.weight.dequantize(q)).collect()),
            QLayer::Dense(d) if d.source == source => Some(d.weights.iter().map(|&q| d.weight.dequantize(q)).collect()),
            _ => None,
        })
    }

    /// Weight parameters per float layer index, in layer order.
    pub fn weight_params(&self) -> Vec<(usize, QuantParams)> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                QLayer::Conv(c) => Some((c.source, c.weight)),
                QLayer::Dense(d) => Some((d.source, d.weight)),
                _ => None,
            })
            .collect()
    }

    /// Int8 weights plus int32 biases.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                QLayer::Conv(c) => c.weights.len() + c.bias.len(),
                QLayer::Dense(d) => d.weights.len() + d.bias.len(),
                _ => 0,
            })
            .sum()
    }
}
