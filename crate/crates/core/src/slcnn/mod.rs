//! SleepLiteCNN: a small 1-D CNN over raw WIN-11 ECG windows with
//! hand-written forward and backward passes.
//!
//! Default topology (input 1 × 1408 at 128 Hz):
//!
//! | layer | output | parameters |
//! |---|---|---|
//! | input batch-norm | 1 × 1408 | 2 |
//! | conv 1→5, k 7, same | 5 × 1408 | 40 |
//! | ReLU, max-pool 2 | 5 × 704 | |
//! | conv 5→45, k 5, same | 45 × 704 | 1 170 |
//! | ReLU, max-pool 2 | 45 × 352 | |
//! | conv 45→25, k 17, same | 25 × 352 | 19 150 |
//! | ReLU, max-pool 2 | 25 × 176 | |
//! | dropout 0.3, flatten | 4 400 | |
//! | dense 4400→4, softmax | 4 | 17 604 |
//!
//! Total trainable parameters: [`DEFAULT_PARAM_COUNT`] = 37 966.
//!
//! The network is generic over [`Real`] so that the same code trains in f32
//! and runs gradient checks in f64.

mod checkpoint;
pub(crate) mod engine;
mod gradcheck;
pub mod simd;
pub(crate) mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint_bytes, save_checkpoint, topology_hash, write_checkpoint_bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use train::{evaluate_network, train, History, HistoryRow, Optimizer, TrainConfig, TrainOutcome};

use std::fmt::Debug;
use std::ops::Range;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::class::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::rng::substream;

/// Trainable parameters of [`TopologyConfig::default`].
pub const DEFAULT_PARAM_COUNT: usize = 37_966;

/// Floating-point element type of a [`Network`].
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static {
    fn axpy(a: Self, x: &[Self], y: &mut [Self]) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = *yi + a * *xi;
        }
    }

    fn dot(x: &[Self], y: &[Self]) -> Self {
        x.iter().zip(y).fold(Self::zero(), |s, (a, b)| s + *a * *b)
    }

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    /// Same-padded convolution over a pre-padded input; see [`simd::conv_f32`].
    #[allow(clippy::too_many_arguments)]
    fn conv(xp: &[Self], cin: usize, w: &[Self], cout: usize, k: usize, bias: &[Self], len: usize, out: &mut [Self]) {
        let lp = len + k - 1;
        for o in 0..cout {
            for l in 0..len {
                let mut s = bias[o];
                for c in 0..cin {
                    let wr = &w[(o * cin + c) * k..(o * cin + c + 1) * k];
                    s = s + Self::dot(wr, &xp[c * lp + l..c * lp + l + k]);
                }
                out[o * len + l] = s;
            }
        }
    }

    /// Weight gradient of [`Real::conv`]; see [`simd::conv_wgrad_f32`].
    fn conv_wgrad(d: &[Self], cout: usize, xp: &[Self], cin: usize, k: usize, len: usize, gw: &mut [Self]) {
        let lp = len + k - 1;
        for o in 0..cout {
            for c in 0..cin {
                for t in 0..k {
                    let g = &mut gw[(o * cin + c) * k + t];
                    *g = *g + Self::dot(&d[o * len..(o + 1) * len], &xp[c * lp + t..c * lp + t + len]);
                }
            }
        }
    }
}

impl Real for f64 {}

impl Real for f32 {
    #[inline]
    fn axpy(a: f32, x: &[f32], y: &mut [f32]) {
        simd::axpy_f32(a, x, y)
    }

    #[inline]
    fn dot(x: &[f32], y: &[f32]) -> f32 {
        simd::dot_f32(x, y)
    }

    fn conv(xp: &[f32], cin: usize, w: &[f32], cout: usize, k: usize, bias: &[f32], len: usize, out: &mut [f32]) {
        simd::conv_f32(xp, cin, w, cout, k, bias, len, out)
    }

    fn conv_wgrad(d: &[f32], cout: usize, xp: &[f32], cin: usize, k: usize, len: usize, gw: &mut [f32]) {
        simd::conv_wgrad_f32(d, cout, xp, cin, k, len, gw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    InputBatchnorm,
    Conv1d { in_ch: usize, out_ch: usize, kernel: usize },
    Relu,
    Maxpool1d { size: usize },
    Dropout { rate: f64 },
    Flatten,
    Dense { inputs: usize, outputs: usize },
    Softmax,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::InputBatchnorm => "input-batchnorm",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Relu => "relu",
            LayerSpec::Maxpool1d { .. } => "maxpool1d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }
}

/// Channels × length of an activation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub len: usize,
}

impl Shape {
    pub fn size(&self) -> usize {
        self.channels * self.len
    }
}

/// Builder parameters for the standard conv → ReLU → pool stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub input_len: usize,
    pub conv_filters: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub pool_size: usize,
    pub dropout: f64,
    pub input_batchnorm: bool,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            input_len: 1408,
            conv_filters: vec![5, 45, 25],
            conv_kernels: vec![7, 5, 17],
            pool_size: 2,
            dropout: 0.3,
            input_batchnorm: true,
        }
    }
}

impl TopologyConfig {
    /// Reduced variant used for gradient checking: convs 1→2→4→2 (k 3) over
    /// 64 samples, then dense.
    pub fn reduced() -> Self {
        TopologyConfig {
            input_len: 64,
            conv_filters: vec![2, 4, 2],
            conv_kernels: vec![3, 3, 3],
            pool_size: 2,
            dropout: 0.3,
            input_batchnorm: true,
        }
    }

    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        if self.conv_filters.len() != self.conv_kernels.len() {
            return Err(Error::Topology(format!(
                "{} filter counts but {} kernel sizes",
                self.conv_filters.len(),
                self.conv_kernels.len()
            )));
        }
        let mut layers = Vec::new();
        if self.input_batchnorm {
            layers.push(LayerSpec::InputBatchnorm);
        }
        let mut in_ch = 1;
        let mut len = self.input_len;
        for (&out_ch, &kernel) in self.conv_filters.iter().zip(&self.conv_kernels) {
            layers.push(LayerSpec::Conv1d { in_ch, out_ch, kernel });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::Maxpool1d { size: self.pool_size });
            in_ch = out_ch;
            len /= self.pool_size.max(1);
        }
        if self.dropout > 0.0 {
            layers.push(LayerSpec::Dropout { rate: self.dropout });
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense {
            inputs: in_ch * len,
            outputs: NUM_CLASSES,
        });
        layers.push(LayerSpec::Softmax);
        Ok(layers)
    }
}

/// Location of a layer's weight and bias inside [`Network::params`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Real = f32> {
    pub layers: Vec<LayerSpec>,
    /// `shapes[0]` is the input; `shapes[i + 1]` is the output of layer `i`.
    pub shapes: Vec<Shape>,
    pub slots: Vec<Option<ParamSlot>>,
    /// All trainable values, layer by layer (weight then bias).
    pub params: Vec<T>,
    /// Input batch-norm inference moments (not trainable).
    pub running_mean: T,
    pub running_var: T,
    /// Per-layer output quantize-dequantize, set only while fine-tuning
    /// with fake quantization.
    pub(crate) fake_quant: Vec<Option<FakeQuant>>,
}

/// Quantize-dequantize of an activation on an int8 grid. Gradients pass
/// through unchanged inside the representable range and are zero outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FakeQuant {
    pub scale: f64,
    pub zero_point: i32,
}

impl FakeQuant {
    /// Returns the snapped value and whether `v` lies inside the range.
    #[inline]
    pub fn apply(&self, v: f64) -> (f64, bool) {
        let lo = self.scale * (-128 - self.zero_point) as f64;
        let hi = self.scale * (127 - self.zero_point) as f64;
        let inside = v >= lo && v <= hi;
        let q = (crate::quant::round_half_away(v / self.scale) + self.zero_point as i64).clamp(-128, 127);
        (self.scale * (q - self.zero_point as i64) as f64, inside)
    }
}

pub const BN_EPS: f64 = 1e-5;

/// Validates the layer chain and returns per-layer output shapes.
pub fn infer_shapes(input_len: usize, layers: &[LayerSpec]) -> Result<Vec<Shape>> {
    let err = |i: usize, msg: String| Error::Topology(format!("layer {i}: {msg}"));
    if input_len == 0 {
        return Err(Error::Topology("input length must be positive".into()));
    }
    let mut shapes = vec![Shape { channels: 1, len: input_len }];
    for (i, layer) in layers.iter().enumerate() {
        let s = *shapes.last().unwrap();
        let next = match *layer {
            LayerSpec::InputBatchnorm => {
                if i != 0 || s.channels != 1 {
                    return Err(err(i, "input batch-norm must be the first layer on one channel".into()));
                }
                s
            }
            LayerSpec::Conv1d { in_ch, out_ch, kernel } => {
                if in_ch != s.channels {
                    return Err(err(i, format!("conv expects {in_ch} channels, receives {}", s.channels)));
                }
                if out_ch == 0 || kernel == 0 {
                    return Err(err(i, "conv needs positive filters and kernel".into()));
                }
                Shape { channels: out_ch, len: s.len }
            }
            LayerSpec::Relu | LayerSpec::Dropout { .. } => {
                if let LayerSpec::Dropout { rate } = layer {
                    if !(0.0..1.0).contains(rate) {
                        return Err(err(i, format!("dropout rate {rate} outside [0, 1)")));
                    }
                }
                s
            }
            LayerSpec::Maxpool1d { size } => {
                if size == 0 || s.len % size != 0 {
                    return Err(err(
                        i,
                        format!("length {} is not divisible by pool size {size}", s.len),
                    ));
                }
                Shape { channels: s.channels, len: s.len / size }
            }
            LayerSpec::Flatten => Shape { channels: 1, len: s.size() },
            LayerSpec::Dense { inputs, outputs } => {
                if inputs != s.size() {
                    return Err(err(i, format!("dense expects {inputs} inputs, receives {}", s.size())));
                }
                Shape { channels: 1, len: outputs }
            }
            LayerSpec::Softmax => {
                if i + 1 != layers.len() {
                    return Err(err(i, "softmax must be the last layer".into()));
                }
                s
            }
        };
        shapes.push(next);
    }
    if layers.last() != Some(&LayerSpec::Softmax) || shapes.last().unwrap().size() != NUM_CLASSES {
        return Err(Error::Topology(format!("network must end in a {NUM_CLASSES}-way softmax")));
    }
    Ok(shapes)
}

impl<T: Real> Network<T> {
    /// He-uniform weights, zero biases, γ = 1, β = 0, moments (0, 1).
    pub fn from_layers(input_len: usize, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let shapes = infer_shapes(input_len, &layers)?;
        let mut rng = substream(seed, "init");
        let mut params = Vec::new();
        let mut slots = Vec::with_capacity(layers.len());
        for layer in &layers {
            let (n_w, n_b, fan_in) = match *layer {
                LayerSpec::InputBatchnorm => (1, 1, 0),
                LayerSpec::Conv1d { in_ch, out_ch, kernel } => (out_ch * in_ch * kernel, out_ch, in_ch * kernel),
                LayerSpec::Dense { inputs, outputs } => (inputs * outputs, outputs, inputs),
                _ => {
                    slots.push(None);
                    continue;
                }
            };
            let w0 = params.len();
            if fan_in == 0 {
                params.push(T::one());
            } else {
                let limit = (6.0 / fan_in as f64).sqrt();
                params.extend((0..n_w).map(|_| T::of(rng.gen_range(-limit..limit))));
            }
            let b0 = params.len();
            params.extend(std::iter::repeat_n(T::zero(), n_b));
            slots.push(Some(ParamSlot {
                weight: w0..b0,
                bias: b0..params.len(),
            }));
        }
        Ok(Network {
            layers,
            shapes,
            slots,
            params,
            running_mean: T::zero(),
            running_var: T::one(),
            fake_quant: Vec::new(),
        })
    }

    pub fn input_len(&self) -> usize {
        self.shapes[0].len
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn has_input_batchnorm(&self) -> bool {
        self.layers.first() == Some(&LayerSpec::InputBatchnorm)
    }

    pub fn weight(&self, layer: usize) -> &[T] {
        let s = self.slots[layer].as_ref().expect("layer has parameters");
        &self.params[s.weight.clone()]
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        let s = self.slots[layer].as_ref().expect("layer has parameters");
        &self.params[s.bias.clone()]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [T] {
        let s = self.slots[layer].clone().expect("layer has parameters");
        &mut self.params[s.weight]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [T] {
        let s = self.slots[layer].clone().expect("layer has parameters");
        &mut self.params[s.bias]
    }

    /// Same network with every value converted to another float type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let conv = |v: T| U::of(v.to_f64().unwrap());
        Network {
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            slots: self.slots.clone(),
            params: self.params.iter().map(|&v| conv(v)).collect(),
            running_mean: conv(self.running_mean),
            running_var: conv(self.running_var),
            fake_quant: self.fake_quant.clone(),
        }
    }

    /// Multiply-accumulate count of one inference, per layer.
    pub fn macs_per_layer(&self) -> Vec<u64> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let out = self.shapes[i + 1];
                match *l {
                    LayerSpec::Conv1d { in_ch, kernel, .. } => (out.size() * in_ch * kernel) as u64,
                    LayerSpec::Dense { inputs, outputs } => (inputs * outputs) as u64,
                    _ => 0,
                }
            })
            .collect()
    }
}

/// Builds the conv stack described by `cfg`.
pub fn build(cfg: &TopologyConfig, seed: u64) -> Result<Network<f32>> {
    Network::from_layers(cfg.input_len, cfg.layers()?, seed)
}

pub fn param_count<T: Real>(net: &Network<T>) -> usize {
    net.param_count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_through_passes_inside_range_only() {
        let fq = FakeQuant { scale: 0.1, zero_point: -28 };
        // representable range [-10.0, 15.5]
        let (v, inside) = fq.apply(1.23);
        assert!(inside);
        assert!((v - 1.2).abs() < 1e-12);
        let (v, inside) = fq.apply(40.0);
        assert!(!inside);
        assert!((v - 15.5).abs() < 1e-12);
        let (v, inside) = fq.apply(-11.0);
        assert!(!inside);
        assert!((v + 10.0).abs() < 1e-12);
    }

    fn closed_form(cfg: &TopologyConfig) -> usize {
        let mut total = if cfg.input_batchnorm { 2 } else { 0 };
        let mut in_ch = 1;
        let mut len = cfg.input_len;
        for (&o, &k) in cfg.conv_filters.iter().zip(&cfg.conv_kernels) {
            total += o * in_ch * k + o;
            in_ch = o;
            len /= cfg.pool_size;
        }
        total + in_ch * len * NUM_CLASSES + NUM_CLASSES
    }

    #[test]
    fn default_param_count_is_golden() {
        let cfg = TopologyConfig::default();
        let net = build(&cfg, 1).unwrap();
        assert_eq!(net.param_count(), DEFAULT_PARAM_COUNT);
        assert_eq!(closed_form(&cfg), DEFAULT_PARAM_COUNT);
        assert!((30_000..=50_000).contains(&DEFAULT_PARAM_COUNT));
    }

    #[test]
    fn small_counts() {
        let dense = Network::<f32>::from_layers(
            10,
            vec![LayerSpec::Dense { inputs: 10, outputs: 4 }, LayerSpec::Softmax],
            0,
        )
        .unwrap();
        assert_eq!(dense.param_count(), 44);
        let conv = Network::<f32>::from_layers(
            8,
            vec![
                LayerSpec::Conv1d { in_ch: 1, out_ch: 5, kernel: 7 },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 40, outputs: 4 },
                LayerSpec::Softmax,
            ],
            0,
        )
        .unwrap();
        assert_eq!(conv.param_count() - 164, 40);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = TopologyConfig::default();
        assert_eq!(build(&cfg, 7).unwrap().params, build(&cfg, 7).unwrap().params);
        assert_ne!(build(&cfg, 7).unwrap().params, build(&cfg, 8).unwrap().params);
    }

    #[test]
    fn indivisible_length_is_rejected() {
        let cfg = TopologyConfig {
            input_len: 1410,
            ..Default::default()
        };
        assert!(matches!(build(&cfg, 0), Err(Error::Topology(_))));
        let bad = TopologyConfig {
            conv_kernels: vec![7, 5],
            ..Default::default()
        };
        assert!(build(&bad, 0).is_err());
    }

    #[test]
    fn default_macs() {
        let net = build(&TopologyConfig::default(), 0).unwrap();
        let total: u64 = net.macs_per_layer().iter().sum();
        assert_eq!(total, 49_280 + 792_000 + 6_732_000 + 17_600);
    }
}
