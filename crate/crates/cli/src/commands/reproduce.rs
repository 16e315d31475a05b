//! `reproduce-synthetic`: the CNN pipeline end to end on generated data.

use serde::{Deserialize, Serialize};

use super::{
    energy_report, evaluate, export_quantized, quantize, synth_data, train_cnn, window, write_json, Context,
    WindowSummary, REPRODUCE_DIR,
};
use crate::config::PipelineKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceSummary {
    pub windows: WindowSummary,
    pub params: usize,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub test_accuracy: f64,
    pub test_macro_f1: f64,
    pub int8_test_accuracy: Option<f64>,
    pub int8_test_macro_f1: Option<f64>,
    pub fp32_uj: Option<f64>,
    pub int8_uj: Option<f64>,
    pub energy_ratio: Option<f64>,
}

pub fn reproduce_synthetic(ctx: &mut Context) -> anyhow::Result<ReproduceSummary> {
    ctx.config.pipeline.kind = PipelineKind::Cnn;
    ctx.config.data.dataset_dir = None;
    synth_data(ctx)?;
    let windows = window(ctx)?;
    let trained = train_cnn(ctx)?;
    let quant = ctx.config.quant.enabled;
    if quant {
        quantize(ctx)?;
    }
    let eval = evaluate(ctx)?;
    let (report, int8) = if quant {
        export_quantized(ctx)?;
        (Some(energy_report(ctx)?), eval.models.get("cnn_int8"))
    } else {
        (None, None)
    };
    let fp = &eval.models["cnn_fp32"];
    let summary = ReproduceSummary {
        windows,
        params: trained.params,
        best_epoch: trained.best_epoch,
        val_accuracy: trained.val.accuracy,
        val_macro_f1: trained.val.macro_f1,
        test_accuracy: fp.accuracy,
        test_macro_f1: fp.macro_f1,
        int8_test_accuracy: int8.map(|m| m.accuracy),
        int8_test_macro_f1: int8.map(|m| m.macro_f1),
        fp32_uj: report.as_ref().map(|r| r.full_precision.total_uj),
        int8_uj: report.as_ref().map(|r| r.quantized.total_uj),
        energy_ratio: report.as_ref().map(|r| r.ratio),
    };
    let dir = ctx.fresh_stage(REPRODUCE_DIR)?;
    write_json(&dir.join("metrics.json"), &summary)?;
    println!(
        "validation accuracy {:.4}, macro-F1 {:.4}; test accuracy {:.4}, macro-F1 {:.4}",
        summary.val_accuracy, summary.val_macro_f1, summary.test_accuracy, summary.test_macro_f1
    );
    let ins = [ctx.stage(super::CNN_DIR).join("metrics.json"), ctx.stage(super::EVALUATE_DIR).join("metrics.json")];
    ctx.write_manifest("reproduce-synthetic", &dir, &ins, &summary)?;
    Ok(summary)
}
