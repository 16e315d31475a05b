//! Float checkpoint container.
//!
//! All integers little-endian:
//!
//! ```text
//! magic          4 bytes  "SLCK"
//! version        u16      1
//! topology_hash  u64      FNV-1a of the topology JSON
//! topology_len   u32
//! topology       JSON     {"input_len": .., "layers": [..]}
//! tensor_count   u32
//! tensors        tensor_count x
//!   name_len     u16, then UTF-8 name
//!   ndim         u8, then ndim x u32 dims
//!   payload      product(dims) x f32
//! ```
//!
//! Tensors are named `layer{i}.weight` / `layer{i}.bias` (convolution
//! weights shaped [out, in, kernel], dense weights [out, in], batch-norm γ
//! and β shaped [1]) plus `bn.running_mean` and `bn.running_var`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, Network};
use crate::error::{Error, Result};
use crate::rng::fnv1a;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SLCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct TopologyRecord {
    input_len: usize,
    layers: Vec<LayerSpec>,
}

fn tensor_shape(net: &Network<f32>, layer: usize) -> (Vec<u32>, Vec<u32>) {
    match net.layers[layer] {
        LayerSpec::Conv1d { in_ch, out_ch, kernel } => {
            (vec![out_ch as u32, in_ch as u32, kernel as u32], vec![out_ch as u32])
        }
        LayerSpec::Dense { inputs, outputs } => (vec![outputs as u32, inputs as u32], vec![outputs as u32]),
        _ => (vec![1], vec![1]),
    }
}

fn tensors(net: &Network<f32>) -> Vec<(String, Vec<u32>, Vec<f32>)> {
    let mut out = Vec::new();
    for (i, slot) in net.slots.iter().enumerate() {
        let Some(slot) = slot else { continue };
        let (ws, bs) = tensor_shape(net, i);
        out.push((format!("layer{i}.weight"), ws, net.params[slot.weight.clone()].to_vec()));
        out.push((format!("layer{i}.bias"), bs, net.params[slot.bias.clone()].to_vec()));
    }
    out.push(("bn.running_mean".into(), vec![1], vec![net.running_mean]));
    out.push(("bn.running_var".into(), vec![1], vec![net.running_var]));
    out
}

/// FNV-1a hash of the canonical topology JSON.
pub fn topology_hash(net: &Network<f32>) -> u64 {
    fnv1a(topology_json(net).as_bytes())
}

fn topology_json(net: &Network<f32>) -> String {
    serde_json::to_string(&TopologyRecord {
        input_len: net.input_len(),
        layers: net.layers.clone(),
    })
    .expect("topology serialises")
}

pub fn write_checkpoint_bytes(net: &Network<f32>) -> Vec<u8> {
    let json = topology_json(net);
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&fnv1a(json.as_bytes()).to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    let ts = tensors(net);
    out.extend_from_slice(&(ts.len() as u32).to_le_bytes());
    for (name, shape, data) in ts {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for d in shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint_bytes(bytes: &[u8]) -> Result<Network<f32>> {
    let mut r = Reader { b: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hash = r.u64()?;
    let len = r.u32()? as usize;
    let json = r.take(len)?;
    if fnv1a(json) != hash {
        return Err(Error::Checkpoint("topology hash mismatch".into()));
    }
    let topo: TopologyRecord =
        serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("topology: {e}")))?;
    let mut net = Network::<f32>::from_layers(topo.input_len, topo.layers, 0)?;
    let expected = tensors(&net);
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!("{count} tensors, topology needs {}", expected.len())));
    }
    let mut values: Vec<Vec<f32>> = Vec::with_capacity(count);
    for (name, shape, _) in &expected {
        let n = r.u16()? as usize;
        let got = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Checkpoint("tensor name not UTF-8".into()))?;
        if got != name {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {got}")));
        }
        let ndim = r.u8()? as usize;
        let dims = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<u32>>>()?;
        if &dims != shape {
            return Err(Error::Checkpoint(format!("tensor {name} has shape {dims:?}, expected {shape:?}")));
        }
        let size: usize = dims.iter().map(|&d| d as usize).product();
        let data = r
            .take(size * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        values.push(data);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    let mut it = values.into_iter();
    for i in 0..net.layers.len() {
        if let Some(slot) = net.slots[i].clone() {
            net.params[slot.weight].copy_from_slice(&it.next().unwrap());
            net.params[slot.bias].copy_from_slice(&it.next().unwrap());
        }
    }
    net.running_mean = it.next().unwrap()[0];
    net.running_var = it.next().unwrap()[0];
    Ok(net)
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &Network<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    read_checkpoint_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
