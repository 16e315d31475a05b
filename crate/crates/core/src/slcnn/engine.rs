//! Per-sample forward and backward passes.
//!
//! A [`Trace`] holds every intermediate activation of one sample so that the
//! backward pass can run straight after the forward pass without keeping a
//! whole batch of activations alive.

use rand::Rng;
use rayon::prelude::*;

use super::{LayerSpec, Network, Real, BN_EPS};
use crate::class::{ApneaClass, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::indexed_substream;

/// Samples handled by one parallel work unit; fixed so that reductions are
/// independent of the thread count.
pub(crate) const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy)]
pub(crate) struct BnStats<T> {
    pub mean: T,
    pub inv_std: T,
}

impl<T: Real> BnStats<T> {
    pub fn from_moments(mean: T, var: T) -> Self {
        BnStats {
            mean,
            inv_std: T::one() / (var + T::of(BN_EPS)).sqrt(),
        }
    }
}

/// Dropout masks are a pure function of (seed, epoch, sample id, layer).
#[derive(Debug, Clone, Copy)]
pub(crate) enum DropoutMode {
    Off,
    Seeded { seed: u64, epoch: u64 },
}

pub(crate) struct Trace<T> {
    pub acts: Vec<Vec<T>>,
    xhat: Vec<T>,
    pool_arg: Vec<Vec<u32>>,
    masks: Vec<Vec<T>>,
    /// Straight-through masks of fake-quantized layer outputs.
    fq_pass: Vec<Vec<bool>>,
    /// Convolution scratch: padded input, padded output gradient, flipped
    /// weights and a zero bias.
    xpad: Vec<T>,
    dpad: Vec<T>,
    wflip: Vec<T>,
    zeros: Vec<T>,
    g: Vec<T>,
    g_prev: Vec<T>,
}

impl<T: Real> Trace<T> {
    pub fn new(net: &Network<T>) -> Self {
        let n = net.layers.len();
        Trace {
            acts: (0..n).map(|i| vec![T::zero(); net.shapes[i + 1].size()]).collect(),
            xhat: vec![T::zero(); net.shapes[0].size()],
            pool_arg: (0..n)
                .map(|i| match net.layers[i] {
                    LayerSpec::Maxpool1d { .. } => vec![0; net.shapes[i + 1].size()],
                    _ => Vec::new(),
                })
                .collect(),
            masks: (0..n)
                .map(|i| match net.layers[i] {
                    LayerSpec::Dropout { .. } => vec![T::one(); net.shapes[i + 1].size()],
                    _ => Vec::new(),
                })
                .collect(),
            fq_pass: vec![Vec::new(); n],
            xpad: Vec::new(),
            dpad: Vec::new(),
            wflip: Vec::new(),
            zeros: Vec::new(),
            g: Vec::new(),
            g_prev: Vec::new(),
        }
    }

    pub fn probs(&self) -> &[T] {
        self.acts.last().unwrap()
    }

    /// Hash of every ReLU sign and pooling choice, used to detect kinks.
    pub fn pattern(&self, net: &Network<T>) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for (i, layer) in net.layers.iter().enumerate() {
            match layer {
                LayerSpec::Relu => self.acts[i].iter().for_each(|v| mix(u64::from(*v > T::zero()))),
                LayerSpec::Maxpool1d { .. } => self.pool_arg[i].iter().for_each(|v| mix(*v as u64)),
                _ => {}
            }
        }
        h
    }
}

/// Copies `ch` rows of `len` into rows of `len + k − 1` with `pad_l` zeros
/// in front and the rest behind.
fn pad_into<T: Real>(buf: &mut Vec<T>, x: &[T], ch: usize, len: usize, pad_l: usize, k: usize) {
    let lp = len + k - 1;
    buf.clear();
    buf.resize(ch * lp, T::zero());
    for c in 0..ch {
        buf[c * lp + pad_l..c * lp + pad_l + len].copy_from_slice(&x[c * len..(c + 1) * len]);
    }
}

impl<T: Real> Network<T> {
    fn first_param_layer(&self) -> usize {
        self.slots.iter().position(Option::is_some).unwrap_or(self.layers.len())
    }

    /// Runs one sample through every layer, filling `tr`.
    pub(crate) fn forward_trace(
        &self,
        x: &[T],
        bn: BnStats<T>,
        dropout: DropoutMode,
        sample_id: u64,
        tr: &mut Trace<T>,
    ) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::InvalidArgument(format!(
                "window has {} samples, network expects {}",
                x.len(),
                self.input_len()
            )));
        }
        for i in 0..self.layers.len() {
            let (done, rest) = tr.acts.split_at_mut(i);
            let input: &[T] = if i == 0 { x } else { &done[i - 1] };
            let out = &mut rest[0];
            let in_shape = self.shapes[i];
            match self.layers[i] {
                LayerSpec::InputBatchnorm => {
                    let (g, b) = (self.weight(i)[0], self.bias(i)[0]);
                    for ((o, xh), v) in out.iter_mut().zip(tr.xhat.iter_mut()).zip(input) {
                        *xh = (*v - bn.mean) * bn.inv_std;
                        *o = g * *xh + b;
                    }
                }
                LayerSpec::Conv1d { in_ch, out_ch, kernel } => {
                    let (w, b) = (self.weight(i), self.bias(i));
                    let len = in_shape.len;
                    pad_into(&mut tr.xpad, input, in_ch, len, (kernel - 1) / 2, kernel);
                    T::conv(&tr.xpad, in_ch, w, out_ch, kernel, b, len, out);
                }
                LayerSpec::Relu => {
                    for (o, v) in out.iter_mut().zip(input) {
                        *o = if *v < T::zero() { T::zero() } else { *v };
                    }
                }
                LayerSpec::Maxpool1d { size } => {
                    let arg = &mut tr.pool_arg[i];
                    for (j, (o, a)) in out.iter_mut().zip(arg.iter_mut()).enumerate() {
                        let base = j * size;
                        let mut best = base;
                        for k in base + 1..base + size {
                            if input[k] > input[best] || input[k].is_nan() {
                                best = k;
                            }
                        }
                        *o = input[best];
                        *a = best as u32;
                    }
                }
                LayerSpec::Dropout { rate } => match dropout {
                    DropoutMode::Seeded { seed, epoch } if rate > 0.0 => {
                        let mut rng = indexed_substream(seed, "dropout", &[epoch, sample_id, i as u64]);
                        let keep = T::of(1.0 / (1.0 - rate));
                        let mask = &mut tr.masks[i];
                        for ((o, m), v) in out.iter_mut().zip(mask.iter_mut()).zip(input) {
                            *m = if rng.gen::<f64>() < rate { T::zero() } else { keep };
                            *o = *v * *m;
                        }
                    }
                    _ => {
                        tr.masks[i].fill(T::one());
                        out.copy_from_slice(input);
                    }
                },
                LayerSpec::Flatten => out.copy_from_slice(input),
                LayerSpec::Dense { inputs, .. } => {
                    let (w, b) = (self.weight(i), self.bias(i));
                    for (o, v) in out.iter_mut().enumerate() {
                        *v = b[o] + T::dot(&w[o * inputs..(o + 1) * inputs], input);
                    }
                }
                LayerSpec::Softmax => {
                    let m = input.iter().cloned().fold(T::neg_infinity(), T::max);
                    let mut s = T::zero();
                    for (o, v) in out.iter_mut().zip(input) {
                        *o = (*v - m).exp();
                        s = s + *o;
                    }
                    for o in out.iter_mut() {
                        *o = *o / s;
                    }
                }
            }
            if let Some(Some(fq)) = self.fake_quant.get(i) {
                let pass = &mut tr.fq_pass[i];
                pass.resize(out.len(), true);
                for (o, p) in out.iter_mut().zip(pass.iter_mut()) {
                    let (v, inside) = fq.apply(o.to_f64().unwrap());
                    *o = T::of(v);
                    *p = inside;
                }
            }
        }
        if tr.probs().iter().any(|p| !p.is_finite()) {
            let layer = tr
                .acts
                .iter()
                .position(|a| a.iter().any(|v| !v.is_finite()))
                .unwrap_or(self.layers.len() - 1);
            return Err(Error::NonFiniteActivation { layer });
        }
        Ok(())
    }

    /// Adds `weight · ∂CE/∂θ` for the sample in `tr` to `grads`.
    pub(crate) fn backward_trace(&self, x: &[T], tr: &mut Trace<T>, label: usize, weight: T, grads: &mut [T]) {
        let n = self.layers.len();
        let first = self.first_param_layer();
        let mut g = std::mem::take(&mut tr.g);
        let mut g_prev = std::mem::take(&mut tr.g_prev);
        g.clear();
        g.extend(tr.acts[n - 1].iter().map(|p| *p * weight));
        g[label] = g[label] - weight;
        for i in (0..n - 1).rev() {
            let input: &[T] = if i == 0 { x } else { &tr.acts[i - 1] };
            let need_prev = i > first;
            let in_size = self.shapes[i].size();
            g_prev.clear();
            if let Some(Some(_)) = self.fake_quant.get(i) {
                for (gv, p) in g.iter_mut().zip(&tr.fq_pass[i]) {
                    if !*p {
                        *gv = T::zero();
                    }
                }
            }
            match self.layers[i] {
                LayerSpec::InputBatchnorm => {
                    let slot = self.slots[i].as_ref().unwrap();
                    let (mut dg, mut db) = (T::zero(), T::zero());
                    for (gv, xh) in g.iter().zip(&tr.xhat) {
                        dg = dg + *gv * *xh;
                        db = db + *gv;
                    }
                    grads[slot.weight.start] = grads[slot.weight.start] + dg;
                    grads[slot.bias.start] = grads[slot.bias.start] + db;
                }
                LayerSpec::Conv1d { in_ch, out_ch, kernel } => {
                    let slot = self.slots[i].as_ref().unwrap();
                    let w = &self.params[slot.weight.clone()];
                    let len = self.shapes[i].len;
                    let pad_l = (kernel - 1) / 2;
                    let (gw_all, gb_all) = grads.split_at_mut(slot.bias.start);
                    let gw = &mut gw_all[slot.weight.clone()];
                    let gb = &mut gb_all[..out_ch];
                    for o in 0..out_ch {
                        gb[o] = gb[o] + g[o * len..(o + 1) * len].iter().fold(T::zero(), |s, v| s + *v);
                    }
                    pad_into(&mut tr.xpad, input, in_ch, len, pad_l, kernel);
                    T::conv_wgrad(&g, out_ch, &tr.xpad, in_ch, kernel, len, gw);
                    if need_prev {
                        // Input gradient: a same-padded convolution of g with
                        // the weights transposed over channels and flipped.
                        tr.wflip.clear();
                        tr.wflip.resize(w.len(), T::zero());
                        for o in 0..out_ch {
                            for c in 0..in_ch {
                                for t in 0..kernel {
                                    tr.wflip[(c * out_ch + o) * kernel + kernel - 1 - t] = w[(o * in_ch + c) * kernel + t];
                                }
                            }
                        }
                        tr.zeros.clear();
                        tr.zeros.resize(in_ch, T::zero());
                        pad_into(&mut tr.dpad, &g, out_ch, len, kernel - 1 - pad_l, kernel);
                        g_prev.resize(in_size, T::zero());
                        T::conv(&tr.dpad, out_ch, &tr.wflip, in_ch, kernel, &tr.zeros, len, &mut g_prev);
                    }
                }
                LayerSpec::Relu => {
                    if need_prev {
                        g_prev.extend(
                            g.iter()
                                .zip(input)
                                .map(|(gv, a)| if *a > T::zero() { *gv } else { T::zero() }),
                        );
                    }
                }
                LayerSpec::Maxpool1d { .. } => {
                    if need_prev {
                        g_prev.resize(in_size, T::zero());
                        for (gv, a) in g.iter().zip(&tr.pool_arg[i]) {
                            g_prev[*a as usize] = g_prev[*a as usize] + *gv;
                        }
                    }
                }
                LayerSpec::Dropout { .. } => {
                    if need_prev {
                        g_prev.extend(g.iter().zip(&tr.masks[i]).map(|(gv, m)| *gv * *m));
                    }
                }
                LayerSpec::Flatten => {
                    if need_prev {
                        g_prev.extend_from_slice(&g);
                    }
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let slot = self.slots[i].as_ref().unwrap();
                    let w = &self.params[slot.weight.clone()];
                    if need_prev {
                        g_prev.resize(in_size, T::zero());
                    }
                    for o in 0..outputs {
                        let gz = g[o];
                        let gb = &mut grads[slot.bias.start + o];
                        *gb = *gb + gz;
                        let row = slot.weight.start + o * inputs;
                        T::axpy(gz, input, &mut grads[row..row + inputs]);
                        if need_prev {
                            T::axpy(gz, &w[o * inputs..(o + 1) * inputs], &mut g_prev);
                        }
                    }
                }
                LayerSpec::Softmax => unreachable!("softmax is handled with the loss"),
            }
            if !need_prev {
                break;
            }
            std::mem::swap(&mut g, &mut g_prev);
        }
        tr.g = g;
        tr.g_prev = g_prev;
    }

    fn inference_stats(&self) -> BnStats<T> {
        BnStats::from_moments(self.running_mean, self.running_var)
    }

    /// Inference-mode class probabilities for one window.
    pub fn forward(&self, x: &[T]) -> Result<[T; NUM_CLASSES]> {
        let mut tr = Trace::new(self);
        self.forward_trace(x, self.inference_stats(), DropoutMode::Off, 0, &mut tr)?;
        Ok(std::array::from_fn(|c| tr.probs()[c]))
    }

    /// Inference-mode probabilities for many windows, in input order.
    pub fn predict_proba(&self, xs: &[&[T]]) -> Result<Vec<[T; NUM_CLASSES]>> {
        let stats = self.inference_stats();
        let chunks: Vec<Result<Vec<[T; NUM_CLASSES]>>> = xs
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut tr = Trace::new(self);
                chunk
                    .iter()
                    .map(|x| {
                        self.forward_trace(x, stats, DropoutMode::Off, 0, &mut tr)?;
                        Ok(std::array::from_fn(|c| tr.probs()[c]))
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(xs.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    pub fn predict(&self, xs: &[&[T]]) -> Result<Vec<ApneaClass>> {
        Ok(self
            .predict_proba(xs)?
            .iter()
            .map(|p| {
                let mut best = 0;
                for c in 1..NUM_CLASSES {
                    if p[c] > p[best] {
                        best = c;
                    }
                }
                ApneaClass::ALL[best]
            })
            .collect())
    }

    /// Training-mode probabilities: batch statistics for the input
    /// batch-norm and seeded dropout masks.
    pub fn forward_training(&self, xs: &[&[T]], dropout_seed: u64) -> Result<Vec<[T; NUM_CLASSES]>> {
        let stats = batch_stats(xs);
        let mut tr = Trace::new(self);
        xs.iter()
            .enumerate()
            .map(|(i, x)| {
                self.forward_trace(
                    x,
                    stats,
                    DropoutMode::Seeded {
                        seed: dropout_seed,
                        epoch: 0,
                    },
                    i as u64,
                    &mut tr,
                )?;
                Ok(std::array::from_fn(|c| tr.probs()[c]))
            })
            .collect()
    }

    /// Weighted mean cross-entropy of a batch and its gradient.
    ///
    /// `ids` identify samples for dropout masks; `class_weights` scale each
    /// sample's loss by its label's weight.
    pub(crate) fn batch_loss_grad(
        &self,
        xs: &[&[T]],
        labels: &[usize],
        ids: &[u64],
        class_weights: &[f64; NUM_CLASSES],
        bn: BnStats<T>,
        dropout: DropoutMode,
    ) -> Result<(f64, Vec<T>)> {
        let parts: Vec<Result<(f64, Vec<T>)>> = (0..xs.len())
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|idx| {
                let mut tr = Trace::new(self);
                let mut grads = vec![T::zero(); self.params.len()];
                let mut loss = 0.0;
                for &k in idx {
                    self.forward_trace(xs[k], bn, dropout, ids[k], &mut tr)?;
                    let w = class_weights[labels[k]];
                    let p = tr.probs()[labels[k]].to_f64().unwrap();
                    loss -= w * p.max(f64::MIN_POSITIVE).ln();
                    self.backward_trace(xs[k], &mut tr, labels[k], T::of(w), &mut grads);
                }
                Ok((loss, grads))
            })
            .collect();
        let total_w: f64 = labels.iter().map(|&l| class_weights[l]).sum();
        let mut grads = vec![T::zero(); self.params.len()];
        let mut loss = 0.0;
        for part in parts {
            let (l, g) = part?;
            loss += l;
            for (a, b) in grads.iter_mut().zip(&g) {
                *a = *a + *b;
            }
        }
        let scale = T::of(1.0 / total_w);
        grads.iter_mut().for_each(|g| *g = *g * scale);
        Ok((loss / total_w, grads))
    }
}

/// Mean and population variance of every sample in the batch.
pub(crate) fn batch_stats<T: Real>(xs: &[&[T]]) -> BnStats<T> {
    let (mean, var) = moments(xs.iter().map(|x| x.iter().map(|v| v.to_f64().unwrap())));
    BnStats::from_moments(T::of(mean), T::of(var))
}

/// Two-pass mean and population variance over nested iterators.
pub(crate) fn moments<I, J>(rows: I) -> (f64, f64)
where
    I: Iterator<Item = J> + Clone,
    J: Iterator<Item = f64>,
{
    let (mut n, mut sum) = (0usize, 0.0);
    for r in rows.clone() {
        for v in r {
            sum += v;
            n += 1;
        }
    }
    let mean = sum / n.max(1) as f64;
    let mut ss = 0.0;
    for r in rows {
        for v in r {
            ss += (v - mean) * (v - mean);
        }
    }
    (mean, ss / n.max(1) as f64)
}
