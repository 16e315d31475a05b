//! Per-inference energy accounting from MAC counts and memory traffic.
//!
//! Each layer is priced as
//!
//! ```text
//! compute = MACs · (mult + add)
//! memory  = (weight bytes + activation bytes read) · sram_read
//!         + activation bytes written · sram_write
//! ```
//!
//! with one weight read, one input read and one output write per layer on a
//! single-level SRAM. Element width is 4 bytes for fp32 and 1 byte for
//! int8 (int32 biases stay 4 bytes). Dropout and flatten are free views at
//! inference time. The int8 variant folds the input batch-norm into the
//! input quantizer, so its two parameters cost no weight traffic.
//!
//! Default costs are the common 45 nm figures (Horowitz, ISSCC 2014):
//! fp32 multiply 3.7 pJ, add 0.9 pJ; int8 multiply 0.2 pJ, add 0.03 pJ;
//! an 8 KB SRAM read of 64 bits at 10 pJ, taken as 1.25 pJ per byte for
//! reads and writes alike.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::QuantizedNetwork;
use crate::slcnn::{infer_shapes, LayerSpec, Network, Real};

pub const ENERGY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp32,
    Int8,
}

impl Precision {
    pub fn element_bytes(self) -> u64 {
        match self {
            Precision::Fp32 => 4,
            Precision::Int8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Fp32 => "fp32",
            Precision::Int8 => "int8",
        }
    }
}

/// Per-operation energy in picojoules for one technology node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCostTable {
    pub node_nm: u32,
    pub mult_fp32: f64,
    pub add_fp32: f64,
    pub mult_int8: f64,
    pub add_int8: f64,
    pub sram_read_per_byte: f64,
    pub sram_write_per_byte: f64,
}

impl Default for OpCostTable {
    fn default() -> Self {
        OpCostTable {
            node_nm: 45,
            mult_fp32: 3.7,
            add_fp32: 0.9,
            mult_int8: 0.2,
            add_int8: 0.03,
            sram_read_per_byte: 1.25,
            sram_write_per_byte: 1.25,
        }
    }
}

impl OpCostTable {
    /// Parses `key = value` lines; `#` starts a comment. Keys not given keep
    /// their defaults, unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = OpCostTable::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::CostTable(format!("line {}: {msg}", n + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "node_nm" {
                t.node_nm = value.parse().map_err(|_| bad(format!("node_nm {value:?} is not an integer")))?;
                continue;
            }
            let v: f64 = value.parse().map_err(|_| bad(format!("{key} = {value:?} is not a number")))?;
            let slot = match key {
                "mult_fp32" => &mut t.mult_fp32,
                "add_fp32" => &mut t.add_fp32,
                "mult_int8" => &mut t.mult_int8,
                "add_int8" => &mut t.add_int8,
                "sram_read_per_byte" => &mut t.sram_read_per_byte,
                "sram_write_per_byte" => &mut t.sram_write_per_byte,
                _ => return Err(bad(format!("unknown key {key:?}"))),
            };
            *slot = v;
        }
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_text(&self) -> String {
        format!(
            "# per-operation energy, picojoules\nnode_nm = {}\nmult_fp32 = {}\nadd_fp32 = {}\nmult_int8 = {}\nadd_int8 = {}\nsram_read_per_byte = {}\nsram_write_per_byte = {}\n",
            self.node_nm,
            self.mult_fp32,
            self.add_fp32,
            self.mult_int8,
            self.add_int8,
            self.sram_read_per_byte,
            self.sram_write_per_byte
        )
    }

    pub fn validate(&self) -> Result<()> {
        let entries = [
            ("mult_fp32", self.mult_fp32),
            ("add_fp32", self.add_fp32),
            ("mult_int8", self.mult_int8),
            ("add_int8", self.add_int8),
            ("sram_read_per_byte", self.sram_read_per_byte),
            ("sram_write_per_byte", self.sram_write_per_byte),
        ];
        for (k, v) in entries {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::CostTable(format!("{k} = {v} must be a non-negative number")));
            }
        }
        Ok(())
    }

    fn mult(&self, p: Precision) -> f64 {
        match p {
            Precision::Fp32 => self.mult_fp32,
            Precision::Int8 => self.mult_int8,
        }
    }

    fn add(&self, p: Precision) -> f64 {
        match p {
            Precision::Fp32 => self.add_fp32,
            Precision::Int8 => self.add_int8,
        }
    }
}

/// Work and traffic of one layer for one inference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounts {
    pub name: String,
    pub macs: u64,
    pub params: u64,
    pub weight_bytes: u64,
    pub activation_read_bytes: u64,
    pub activation_write_bytes: u64,
}

impl LayerCounts {
    pub fn activation_bytes(&self) -> u64 {
        self.activation_read_bytes + self.activation_write_bytes
    }
}

/// Per-layer counts for a layer chain at the given precision.
pub fn count_layers(input_len: usize, layers: &[LayerSpec], precision: Precision) -> Result<Vec<LayerCounts>> {
    let shapes = infer_shapes(input_len, layers)?;
    let w = precision.element_bytes();
    Ok(layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let (inp, out) = (shapes[i].size() as u64, shapes[i + 1].size() as u64);
            let (macs, n_w, n_b) = match *layer {
                LayerSpec::Conv1d { in_ch, out_ch, kernel } => {
                    (out * (in_ch * kernel) as u64, (out_ch * in_ch * kernel) as u64, out_ch as u64)
                }
                LayerSpec::Dense { inputs, outputs } => ((inputs * outputs) as u64, (inputs * outputs) as u64, outputs as u64),
                LayerSpec::InputBatchnorm => (0, 1, 1),
                _ => (0, 0, 0),
            };
            let weight_bytes = match (layer, precision) {
                (LayerSpec::InputBatchnorm, Precision::Int8) => 0,
                (_, Precision::Int8) => n_w + 4 * n_b,
                (_, Precision::Fp32) => 4 * (n_w + n_b),
            };
            let view = matches!(layer, LayerSpec::Dropout { .. } | LayerSpec::Flatten);
            LayerCounts {
                name: format!("{i}:{}", layer.name()),
                macs,
                params: n_w + n_b,
                weight_bytes,
                activation_read_bytes: if view { 0 } else { inp * w },
                activation_write_bytes: if view { 0 } else { out * w },
            }
        })
        .collect())
}

pub fn count_network<T: Real>(net: &Network<T>, precision: Precision) -> Result<Vec<LayerCounts>> {
    count_layers(net.input_len(), &net.layers, precision)
}

pub fn count_quantized(q: &QuantizedNetwork) -> Result<Vec<LayerCounts>> {
    count_layers(q.input_len, &q.topology, Precision::Int8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub name: String,
    pub macs: u64,
    pub params: u64,
    pub activation_bytes: u64,
    pub mult_pj: f64,
    pub add_pj: f64,
    pub compute_pj: f64,
    pub memory_pj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub precision: Precision,
    pub rows: Vec<LayerEnergy>,
    pub macs: u64,
    pub compute_uj: f64,
    pub memory_uj: f64,
    pub total_uj: f64,
}

pub fn estimate_energy(counts: &[LayerCounts], table: &OpCostTable, precision: Precision) -> Result<EnergyEstimate> {
    table.validate()?;
    let rows: Vec<LayerEnergy> = counts
        .iter()
        .map(|c| {
            let mult_pj = c.macs as f64 * table.mult(precision);
            let add_pj = c.macs as f64 * table.add(precision);
            LayerEnergy {
                name: c.name.clone(),
                macs: c.macs,
                params: c.params,
                activation_bytes: c.activation_bytes(),
                mult_pj,
                add_pj,
                compute_pj: mult_pj + add_pj,
                memory_pj: (c.weight_bytes + c.activation_read_bytes) as f64 * table.sram_read_per_byte
                    + c.activation_write_bytes as f64 * table.sram_write_per_byte,
            }
        })
        .collect();
    let compute_uj = rows.iter().map(|r| r.compute_pj).sum::<f64>() * 1e-6;
    let memory_uj = rows.iter().map(|r| r.memory_pj).sum::<f64>() * 1e-6;
    Ok(EnergyEstimate {
        precision,
        macs: rows.iter().map(|r| r.macs).sum(),
        rows,
        compute_uj,
        memory_uj,
        total_uj: compute_uj + memory_uj,
    })
}

/// Accuracy figures attached to one side of a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Side-by-side energy of a full-precision network and its int8 twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub schema_version: u32,
    pub table: OpCostTable,
    pub full_precision: EnergyEstimate,
    pub quantized: EnergyEstimate,
    /// `full_precision.total_uj / quantized.total_uj`.
    pub ratio: f64,
    pub full_precision_score: Option<ModelScore>,
    pub quantized_score: Option<ModelScore>,
}

impl EnergyReport {
    pub fn compare(table: &OpCostTable, full_precision: EnergyEstimate, quantized: EnergyEstimate) -> Self {
        let ratio = if quantized.total_uj > 0.0 {
            full_precision.total_uj / quantized.total_uj
        } else {
            f64::NAN
        };
        EnergyReport {
            schema_version: ENERGY_SCHEMA_VERSION,
            table: table.clone(),
            full_precision,
            quantized,
            ratio,
            full_precision_score: None,
            quantized_score: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Aligned terminal table.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "energy per inference, {} nm cost table", self.table.node_nm);
        let _ = writeln!(
            s,
            "{:<20} {:>10} {:>8} {:>12} {:>12} {:>12} {:>12}",
            "layer", "MACs", "params", "fp32 comp pJ", "fp32 mem pJ", "int8 comp pJ", "int8 mem pJ"
        );
        for (a, b) in self.full_precision.rows.iter().zip(&self.quantized.rows) {
            let _ = writeln!(
                s,
                "{:<20} {:>10} {:>8} {:>12.1} {:>12.1} {:>12.1} {:>12.1}",
                a.name, a.macs, a.params, a.compute_pj, a.memory_pj, b.compute_pj, b.memory_pj
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<16} {:>12} {:>12} {:>12} {:>9} {:>9}", "", "compute uJ", "memory uJ", "total uJ", "acc", "F1");
        for (label, e, score) in [
            ("full precision", &self.full_precision, self.full_precision_score),
            ("8-bit", &self.quantized, self.quantized_score),
        ] {
            let (acc, f1) = match score {
                Some(sc) => (format!("{:.4}", sc.accuracy), format!("{:.4}", sc.macro_f1)),
                None => ("-".into(), "-".into()),
            };
            let _ = writeln!(
                s,
                "{:<16} {:>12.4} {:>12.4} {:>12.4} {:>9} {:>9}",
                label, e.compute_uj, e.memory_uj, e.total_uj, acc, f1
            );
        }
        let _ = writeln!(s, "ratio fp32/int8: {:.2}", self.ratio);
        s
    }
}

/// Energy of `net` at fp32 against `qnet` at int8.
pub fn emit_report<T: Real>(net: &Network<T>, qnet: &QuantizedNetwork, table: &OpCostTable) -> Result<EnergyReport> {
    if net.layers != qnet.topology || net.input_len() != qnet.input_len {
        return Err(Error::Topology("float and quantized networks differ in topology".into()));
    }
    let fp = estimate_energy(&count_network(net, Precision::Fp32)?, table, Precision::Fp32)?;
    let q = estimate_energy(&count_quantized(qnet)?, table, Precision::Int8)?;
    Ok(EnergyReport::compare(table, fp, q))
}
