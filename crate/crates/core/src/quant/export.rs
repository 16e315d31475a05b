//! Versioned binary export of a [`QuantizedNetwork`].
//!
//! All integers and floats little-endian:
//!
//! ```text
//! magic          4 bytes  "SLQN"
//! version        u16      1
//! input_len      u32
//! affine_a       f64      folded input batch-norm, y = a·x + b
//! affine_b       f64
//! input_scale    f64
//! input_zp       i32
//! topology_len   u32, then topology JSON (float layer list)
//! op_count       u32
//! ops            op_count x, each starting with a u8 kind:
//!   1 conv       source u16, in_ch u32, out_ch u32, kernel u32, len u32,
//!                fused_relu u8, weight tensor, bias tensor,
//!                out_scale f64, out_zp i32, multiplier i32, shift u8
//!   2 relu       zero_point i32
//!   3 maxpool    size u32
//!   4 dense      source u16, inputs u32, outputs u32, weight tensor,
//!                bias tensor, output_scale f64
//! tensor         name_len u16, name, dtype u8 (0 = i8, 1 = i32), ndim u8,
//!                ndim x u32 dims, payload, scale f64, zero_point i32
//! ```
//!
//! Convolution weights are `[out][in][kernel]`, dense weights
//! `[out][in]`. Biases are int32 at scale `s_in · s_w`. A requantized
//! conv output is `clamp(round(acc · multiplier / 2^shift) + out_zp)`,
//! rounding half away from zero, with the lower clamp at `out_zp` when
//! `fused_relu` is set. The calibrated (min, max) of each tensor is not
//! stored; read-back tensors report their representable range instead.

use std::fs;
use std::path::Path;

use super::network::{QConv, QDense, QLayer, QuantizedNetwork};
use super::{QuantParams, QMAX, QMIN};
use crate::error::{Error, Result};
use crate::slcnn::{infer_shapes, LayerSpec};

pub const QUANT_MAGIC: &[u8; 4] = b"SLQN";
pub const QUANT_VERSION: u16 = 1;

const OP_CONV: u8 = 1;
const OP_RELU: u8 = 2;
const OP_MAXPOOL: u8 = 3;
const OP_DENSE: u8 = 4;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn header(&mut self, name: &str, dtype: u8, dims: &[usize]) {
        self.u16(name.len() as u16);
        self.bytes(name.as_bytes());
        self.u8(dtype);
        self.u8(dims.len() as u8);
        for &d in dims {
            self.u32(d as u32);
        }
    }
    fn i8_tensor(&mut self, name: &str, dims: &[usize], data: &[i8], p: &QuantParams) {
        self.header(name, 0, dims);
        self.bytes(&data.iter().map(|&v| v as u8).collect::<Vec<_>>());
        self.f64(p.scale);
        self.i32(p.zero_point);
    }
    fn i32_tensor(&mut self, name: &str, data: &[i32], scale: f64) {
        self.header(name, 1, &[data.len()]);
        for &v in data {
            self.i32(v);
        }
        self.f64(scale);
        self.i32(0);
    }
}

pub fn write_quantized_bytes(q: &QuantizedNetwork) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.bytes(QUANT_MAGIC);
    w.u16(QUANT_VERSION);
    w.u32(q.input_len as u32);
    w.f64(q.input_affine.0);
    w.f64(q.input_affine.1);
    w.f64(q.input.scale);
    w.i32(q.input.zero_point);
    let json = serde_json::to_vec(&q.topology).expect("topology serialises");
    w.u32(json.len() as u32);
    w.bytes(&json);
    w.u32(q.layers.len() as u32);
    for layer in &q.layers {
        match layer {
            QLayer::Conv(c) => {
                w.u8(OP_CONV);
                w.u16(c.source as u16);
                for v in [c.in_ch, c.out_ch, c.kernel, c.len] {
                    w.u32(v as u32);
                }
                w.u8(c.fused_relu as u8);
                w.i8_tensor(
                    &format!("layer{}.weight", c.source),
                    &[c.out_ch, c.in_ch, c.kernel],
                    &c.weights,
                    &c.weight,
                );
                w.i32_tensor(&format!("layer{}.bias", c.source), &c.bias, c.input.scale * c.weight.scale);
                w.f64(c.output.scale);
                w.i32(c.output.zero_point);
                w.i32(c.multiplier);
                w.u8(c.shift as u8);
            }
            QLayer::Relu { zero_point } => {
                w.u8(OP_RELU);
                w.i32(*zero_point);
            }
            QLayer::MaxPool { size } => {
                w.u8(OP_MAXPOOL);
                w.u32(*size as u32);
            }
            QLayer::Dense(d) => {
                w.u8(OP_DENSE);
                w.u16(d.source as u16);
                w.u32(d.inputs as u32);
                w.u32(d.outputs as u32);
                w.i8_tensor(&format!("layer{}.weight", d.source), &[d.outputs, d.inputs], &d.weights, &d.weight);
                w.i32_tensor(&format!("layer{}.bias", d.source), &d.bias, d.output_scale);
                w.f64(d.output_scale);
            }
        }
    }
    w.0
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Quantization(format!("export: {}", msg.into()))
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.arr()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr()?))
    }
    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.arr()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.arr()?))
    }

    fn params(&mut self) -> Result<QuantParams> {
        let scale = self.f64()?;
        let zero_point = self.i32()?;
        if !(scale.is_finite() && scale > 0.0) || !(QMIN..=QMAX).contains(&zero_point) {
            return Err(err(format!("invalid quantization parameters ({scale}, {zero_point})")));
        }
        let p = QuantParams {
            scale,
            zero_point,
            min: 0.0,
            max: 0.0,
        };
        let (min, max) = p.representable();
        Ok(QuantParams { min, max, ..p })
    }

    fn header(&mut self, name: &str, dtype: u8, dims: &[usize]) -> Result<()> {
        let n = self.u16()? as usize;
        let got = self.take(n)?;
        if got != name.as_bytes() {
            return Err(err(format!("expected tensor {name}, found {}", String::from_utf8_lossy(got))));
        }
        if self.u8()? != dtype {
            return Err(err(format!("tensor {name} has the wrong element type")));
        }
        let ndim = self.u8()? as usize;
        let got: Vec<usize> = (0..ndim).map(|_| self.usize()).collect::<Result<_>>()?;
        if got != dims {
            return Err(err(format!("tensor {name} has shape {got:?}, expected {dims:?}")));
        }
        Ok(())
    }

    fn i8_tensor(&mut self, name: &str, dims: &[usize]) -> Result<(Vec<i8>, QuantParams)> {
        self.header(name, 0, dims)?;
        let data = self.take(dims.iter().product())?.iter().map(|&b| b as i8).collect();
        Ok((data, self.params()?))
    }

    fn i32_tensor(&mut self, name: &str, len: usize) -> Result<Vec<i32>> {
        self.header(name, 1, &[len])?;
        let data = (0..len).map(|_| self.i32()).collect::<Result<_>>()?;
        self.f64()?;
        self.i32()?;
        Ok(data)
    }
}

pub fn read_quantized_bytes(bytes: &[u8]) -> Result<QuantizedNetwork> {
    let mut r = Reader { b: bytes, pos: 0 };
    if r.take(4)? != QUANT_MAGIC {
        return Err(err("bad magic"));
    }
    let version = r.u16()?;
    if version != QUANT_VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let input_len = r.usize()?;
    let input_affine = (r.f64()?, r.f64()?);
    let input = r.params()?;
    let json_len = r.usize()?;
    let topology: Vec<LayerSpec> =
        serde_json::from_slice(r.take(json_len)?).map_err(|e| err(format!("topology: {e}")))?;
    infer_shapes(input_len, &topology)?;
    let count = r.usize()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let layer = match r.u8()? {
            OP_CONV => {
                let source = r.u16()? as usize;
                let (in_ch, out_ch, kernel, len) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
                if topology.get(source) != Some(&LayerSpec::Conv1d { in_ch, out_ch, kernel }) {
                    return Err(err(format!("conv op does not match topology layer {source}")));
                }
                let fused_relu = r.u8()? != 0;
                let (weights, weight) = r.i8_tensor(&format!("layer{source}.weight"), &[out_ch, in_ch, kernel])?;
                let bias = r.i32_tensor(&format!("layer{source}.bias"), out_ch)?;
                let output = r.params()?;
                let multiplier = r.i32()?;
                let shift = r.u8()? as u32;
                if multiplier <= 0 || !(1..=62).contains(&shift) {
                    return Err(err("invalid requantization multiplier"));
                }
                QLayer::Conv(QConv {
                    source,
                    in_ch,
                    out_ch,
                    kernel,
                    len,
                    weights,
                    weight,
                    bias,
                    input: QuantParams { min: 0.0, max: 0.0, scale: 1.0, zero_point: 0 },
                    output,
                    multiplier,
                    shift,
                    fused_relu,
                })
            }
            OP_RELU => QLayer::Relu { zero_point: r.i32()? },
            OP_MAXPOOL => {
                let size = r.usize()?;
                if size == 0 {
                    return Err(err("pool size 0"));
                }
                QLayer::MaxPool { size }
            }
            OP_DENSE => {
                let source = r.u16()? as usize;
                let (inputs, outputs) = (r.usize()?, r.usize()?);
                if topology.get(source) != Some(&LayerSpec::Dense { inputs, outputs }) {
                    return Err(err(format!("dense op does not match topology layer {source}")));
                }
                let (weights, weight) = r.i8_tensor(&format!("layer{source}.weight"), &[outputs, inputs])?;
                let bias = r.i32_tensor(&format!("layer{source}.bias"), outputs)?;
                let output_scale = r.f64()?;
                QLayer::Dense(QDense {
                    source,
                    inputs,
                    outputs,
                    weights,
                    weight,
                    bias,
                    input: QuantParams { min: 0.0, max: 0.0, scale: 1.0, zero_point: 0 },
                    output_scale,
                })
            }
            k => return Err(err(format!("unknown op kind {k}"))),
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(err("trailing bytes after last op"));
    }
    // Each op's input parameters are the previous op's output parameters.
    let mut cur = input;
    for layer in &mut layers {
        match layer {
            QLayer::Conv(c) => {
                c.input = cur;
                cur = c.output;
            }
            QLayer::Dense(d) => d.input = cur,
            _ => {}
        }
    }
    Ok(QuantizedNetwork {
        input_len,
        topology,
        input_affine,
        input,
        layers,
    })
}

pub fn save_quantized(path: impl AsRef<Path>, q: &QuantizedNetwork) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_quantized_bytes(q)).map_err(|e| Error::io(path, e))
}

pub fn load_quantized(path: impl AsRef<Path>) -> Result<QuantizedNetwork> {
    let path = path.as_ref();
    read_quantized_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
