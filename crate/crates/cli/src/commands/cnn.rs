//! CNN pipeline: `train-cnn`, `quantize`, `evaluate`, `energy-report` and
//! `export-quantized`.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::Context as _;
use serde::{Deserialize, Serialize};
use sleeplite_core::baseline::{evaluate as score, Metrics};
use sleeplite_core::energy::{count_quantized, emit_report, ModelScore};
use sleeplite_core::quant::{calibrate, load_quantized, qat_finetune, quantize as ptq, write_quantized_bytes, QatConfig};
use sleeplite_core::slcnn::{build, load_checkpoint, save_checkpoint, train};
use sleeplite_core::{Network, OpCostTable, QuantizedNetwork};

use super::features::baseline_predictions;
use super::{inputs, labels, write_json, Context, CNN_DIR, ENERGY_DIR, EVALUATE_DIR, EXPORT_DIR, QUANT_DIR};
use crate::config::config_error;

const MODEL_FILE: &str = "model.slck";
const QMODEL_FILE: &str = "model.slqn";
/// Float shadow network after fake-quantization fine-tuning.
const QAT_FILE: &str = "qat.slck";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub params: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub val: Metrics,
}

pub fn train_cnn(ctx: &Context) -> anyhow::Result<TrainSummary> {
    let tr = ctx.read_split("train")?;
    let va = ctx.read_split("val")?;
    let topo = ctx.config.cnn.topology(tr.samples_per_window());
    let net = build(&topo, ctx.seed("init"))?;
    let cfg = ctx.config.cnn.train_config(ctx.seed("train"));
    log::info!(
        "training {} parameters on {} windows ({} val), {} epochs",
        net.param_count(),
        tr.len(),
        va.len(),
        cfg.epochs
    );
    let (tx, ty, vx, vy) = (inputs(&tr), labels(&tr), inputs(&va), labels(&va));
    let outcome = train(net, &tx, &ty, &vx, &vy, &cfg)?;
    let val = score(&outcome.network.predict(&vx)?, &vy)?;

    let dir = ctx.fresh_stage(CNN_DIR)?;
    save_checkpoint(dir.join(MODEL_FILE), &outcome.network)?;
    fs::write(dir.join("history.csv"), outcome.history.to_csv())?;
    let summary = TrainSummary {
        params: outcome.network.param_count(),
        epochs_run: outcome.history.rows.len(),
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        val,
    };
    write_json(&dir.join("metrics.json"), &summary)?;
    log::info!(
        "best epoch {}: val accuracy {:.4}, macro-F1 {:.4}",
        summary.best_epoch,
        summary.val.accuracy,
        summary.val.macro_f1
    );
    let ins = [ctx.windows_path("train"), ctx.windows_path("val")];
    ctx.write_manifest("train-cnn", &dir, &ins, &summary)?;
    Ok(summary)
}

fn load_model(ctx: &Context) -> anyhow::Result<Network<f32>> {
    let path = ctx.stage(CNN_DIR).join(MODEL_FILE);
    load_checkpoint(&path).with_context(|| format!("loading {} (run `train-cnn` first)", path.display()))
}

/// The float network the int8 model was derived from: the fine-tuned
/// shadow when fake quantization ran, else the trained model.
fn load_float_twin(ctx: &Context) -> anyhow::Result<(Network<f32>, PathBuf)> {
    let qat = ctx.stage(QUANT_DIR).join(QAT_FILE);
    if qat.is_file() {
        return Ok((load_checkpoint(&qat)?, qat));
    }
    Ok((load_model(ctx)?, ctx.stage(CNN_DIR).join(MODEL_FILE)))
}

fn load_qmodel(ctx: &Context) -> anyhow::Result<(QuantizedNetwork, PathBuf)> {
    let path = ctx.stage(QUANT_DIR).join(QMODEL_FILE);
    let q = load_quantized(&path).with_context(|| format!("loading {} (run `quantize` first)", path.display()))?;
    Ok((q, path))
}

#[derive(Debug, Clone, Serialize)]
struct QuantSummary {
    calibration_windows: usize,
    qat_epochs: usize,
    val_float: Metrics,
    val_int8: Metrics,
    /// Share of validation windows where the int8 and float argmax agree.
    val_agreement: f64,
}

pub fn quantize(ctx: &Context) -> anyhow::Result<()> {
    let qc = &ctx.config.quant;
    if !qc.enabled {
        return Err(config_error("quantization is disabled (quant.enabled = false)"));
    }
    let net = load_model(ctx)?;
    let tr = ctx.read_split("train")?;
    let va = ctx.read_split("val")?;
    let tx = inputs(&tr);
    let n_cal = qc.calibration_windows.min(tx.len());
    let calib = calibrate(&net, &tx[..n_cal])?;
    let dir = ctx.fresh_stage(QUANT_DIR)?;
    let float = if qc.qat_epochs > 0 {
        let cfg = QatConfig {
            epochs: qc.qat_epochs,
            batch_size: qc.qat_batch_size,
            learning_rate: qc.qat_learning_rate,
            seed: ctx.seed("qat"),
        };
        let tuned = qat_finetune(&net, &calib, &tx, &labels(&tr), &cfg)?;
        save_checkpoint(dir.join(QAT_FILE), &tuned)?;
        tuned
    } else {
        net
    };
    let calib = calibrate(&float, &tx[..n_cal])?;
    let q = ptq(&float, &calib)?;
    fs::write(dir.join(QMODEL_FILE), write_quantized_bytes(&q))?;

    let (vx, vy) = (inputs(&va), labels(&va));
    let pf = float.predict(&vx)?;
    let pq = q.predict(&vx)?;
    let agree = pf.iter().zip(&pq).filter(|(a, b)| a == b).count();
    let summary = QuantSummary {
        calibration_windows: n_cal,
        qat_epochs: qc.qat_epochs,
        val_float: score(&pf, &vy)?,
        val_int8: score(&pq, &vy)?,
        val_agreement: agree as f64 / vx.len().max(1) as f64,
    };
    write_json(&dir.join("metrics.json"), &summary)?;
    log::info!(
        "int8 val accuracy {:.4} (float {:.4}), argmax agreement {:.4}",
        summary.val_int8.accuracy,
        summary.val_float.accuracy,
        summary.val_agreement
    );
    let ins = [
        ctx.stage(CNN_DIR).join(MODEL_FILE),
        ctx.windows_path("train"),
        ctx.windows_path("val"),
    ];
    ctx.write_manifest("quantize", &dir, &ins, &summary)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSummary {
    pub split: String,
    pub windows: usize,
    pub models: BTreeMap<String, Metrics>,
}

/// Scores every trained model found under the output root on the test split.
pub fn evaluate(ctx: &Context) -> anyhow::Result<EvaluateSummary> {
    let mut models = BTreeMap::new();
    let mut ins = Vec::new();
    let mut windows = 0;
    let cnn_path = ctx.stage(CNN_DIR).join(MODEL_FILE);
    if cnn_path.is_file() {
        let te = ctx.read_split("test")?;
        let (x, y) = (inputs(&te), labels(&te));
        windows = te.len();
        ins.push(ctx.windows_path("test"));
        ins.push(cnn_path);
        models.insert("cnn_fp32".to_string(), score(&load_model(ctx)?.predict(&x)?, &y)?);
        if ctx.stage(QUANT_DIR).join(QMODEL_FILE).is_file() {
            let (q, qp) = load_qmodel(ctx)?;
            models.insert("cnn_int8".to_string(), score(&q.predict(&x)?, &y)?);
            ins.push(qp);
        }
    }
    if let Some(preds) = baseline_predictions(ctx)? {
        for (name, pred, truth) in preds {
            windows = truth.len();
            models.insert(name.to_string(), score(&pred, &truth)?);
        }
        ins.push(ctx.stage(super::BASELINE_DIR).join("models.json"));
        ins.push(ctx.stage(super::FEATURES_DIR).join("test.csv"));
    }
    if models.is_empty() {
        return Err(sleeplite_core::Error::InvalidArgument(
            "no trained model found; run `train-cnn` or `train-baseline` first".into(),
        )
        .into());
    }
    let summary = EvaluateSummary {
        split: "test".into(),
        windows,
        models,
    };
    let dir = ctx.fresh_stage(EVALUATE_DIR)?;
    write_json(&dir.join("metrics.json"), &summary)?;
    for (name, m) in &summary.models {
        println!("{name}\n{}", m.render_text());
    }
    ctx.write_manifest("evaluate", &dir, &ins, summary.models.keys().collect::<Vec<_>>())?;
    Ok(summary)
}

fn cost_table(ctx: &Context) -> anyhow::Result<(OpCostTable, Option<PathBuf>)> {
    match &ctx.config.energy.cost_table {
        Some(p) => Ok((
            OpCostTable::load(p).with_context(|| format!("loading cost table {}", p.display()))?,
            Some(p.clone()),
        )),
        None => Ok((OpCostTable::default(), None)),
    }
}

#[derive(Debug, Clone, Serialize)]
struct EnergySummary {
    fp32_uj: f64,
    int8_uj: f64,
    ratio: f64,
}

pub fn energy_report(ctx: &Context) -> anyhow::Result<sleeplite_core::EnergyReport> {
    let (float, fpath) = load_float_twin(ctx)?;
    let (q, qpath) = load_qmodel(ctx)?;
    let (table, tpath) = cost_table(ctx)?;
    let mut report = emit_report(&float, &q, &table)?;
    let mut ins = vec![fpath, qpath];
    ins.extend(tpath);
    let test = ctx.windows_path("test");
    if test.is_file() {
        let te = ctx.read_split("test")?;
        let (x, y) = (inputs(&te), labels(&te));
        let f = score(&float.predict(&x)?, &y)?;
        let i = score(&q.predict(&x)?, &y)?;
        report.full_precision_score = Some(ModelScore {
            accuracy: f.accuracy,
            macro_f1: f.macro_f1,
        });
        report.quantized_score = Some(ModelScore {
            accuracy: i.accuracy,
            macro_f1: i.macro_f1,
        });
        ins.push(test);
    }
    let dir = ctx.fresh_stage(ENERGY_DIR)?;
    let mut json = report.to_json();
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    let text = report.render_text();
    fs::write(dir.join("report.txt"), &text)?;
    print!("{text}");
    let summary = EnergySummary {
        fp32_uj: report.full_precision.total_uj,
        int8_uj: report.quantized.total_uj,
        ratio: report.ratio,
    };
    ctx.write_manifest("energy-report", &dir, &ins, &summary)?;
    Ok(report)
}

/// Deployment footprint of the exported int8 model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub params: usize,
    pub macs: u64,
    /// Int8 weights plus int32 biases.
    pub parameter_bytes: u64,
    /// Largest input-plus-output activation footprint of any one layer.
    pub peak_activation_bytes: u64,
    pub file_bytes: u64,
    pub layers: Vec<LayerResource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerResource {
    pub name: String,
    pub macs: u64,
    pub parameter_bytes: u64,
    pub activation_bytes: u64,
}

pub fn export_quantized(ctx: &Context) -> anyhow::Result<ResourceReport> {
    let (q, qpath) = load_qmodel(ctx)?;
    let bytes = write_quantized_bytes(&q);
    let counts = count_quantized(&q)?;
    let layers: Vec<LayerResource> = counts
        .iter()
        .map(|c| LayerResource {
            name: c.name.clone(),
            macs: c.macs,
            parameter_bytes: c.weight_bytes,
            activation_bytes: c.activation_bytes(),
        })
        .collect();
    let report = ResourceReport {
        params: q.param_count(),
        macs: counts.iter().map(|c| c.macs).sum(),
        parameter_bytes: counts.iter().map(|c| c.weight_bytes).sum(),
        peak_activation_bytes: layers.iter().map(|l| l.activation_bytes).max().unwrap_or(0),
        file_bytes: bytes.len() as u64,
        layers,
    };
    let dir = ctx.fresh_stage(EXPORT_DIR)?;
    fs::write(dir.join(QMODEL_FILE), &bytes)?;
    write_json(&dir.join("resources.json"), &report)?;
    println!(
        "exported {} parameters ({} B) to {}; peak activations {} B",
        report.params,
        report.file_bytes,
        dir.join(QMODEL_FILE).display(),
        report.peak_activation_bytes
    );
    ctx.write_manifest("export-quantized", &dir, &[qpath], &report)?;
    Ok(report)
}
