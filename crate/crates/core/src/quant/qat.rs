//! Quantization-aware fine-tuning.
//!
//! Each step evaluates the loss on a copy of the network whose conv and
//! dense weights are snapped to their symmetric int8 grid and whose
//! activations are snapped to the calibrated grids at the same points the
//! integer path requantizes. The gradient of that copy is applied to the
//! float shadow weights (straight-through estimator). The input batch-norm
//! stays frozen at its inference moments since it is folded into the
//! input quantizer.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Calibration, QuantParams};
use crate::class::{ApneaClass, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::indexed_substream;
use crate::slcnn::engine::{BnStats, DropoutMode};
use crate::slcnn::train::OptimState;
use crate::slcnn::{FakeQuant, LayerSpec, Network, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QatConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for QatConfig {
    fn default() -> Self {
        QatConfig {
            epochs: 3,
            batch_size: 64,
            learning_rate: 1e-4,
            seed: 0,
        }
    }
}

fn fake(p: QuantParams) -> FakeQuant {
    FakeQuant {
        scale: p.scale,
        zero_point: p.zero_point,
    }
}

/// Output snapping points that mirror [`quantize`](super::quantize).
fn activation_points(net: &Network<f32>, calib: &Calibration) -> Vec<Option<FakeQuant>> {
    let mut fq = vec![None; net.layers.len()];
    for (i, layer) in net.layers.iter().enumerate() {
        match layer {
            LayerSpec::InputBatchnorm => fq[i] = Some(fake(calib.activations[i + 1])),
            LayerSpec::Conv1d { .. } => {
                if net.layers.get(i + 1) == Some(&LayerSpec::Relu) {
                    fq[i + 1] = Some(fake(calib.activations[i + 2]));
                } else {
                    fq[i] = Some(fake(calib.activations[i + 1]));
                }
            }
            _ => {}
        }
    }
    fq
}

fn snap_weights(shadow: &Network<f32>, target: &mut Network<f32>) -> Result<()> {
    for (i, layer) in shadow.layers.iter().enumerate() {
        if matches!(layer, LayerSpec::Conv1d { .. } | LayerSpec::Dense { .. }) {
            let w: Vec<f64> = shadow.weight(i).iter().map(|&v| v as f64).collect();
            let p = QuantParams::symmetric(&w)?;
            for (t, v) in target.weight_mut(i).iter_mut().zip(&w) {
                *t = p.dequantize(p.quantize(*v)) as f32;
            }
        }
    }
    Ok(())
}

/// Fine-tunes `net` with fake quantization and returns the float shadow
/// network; quantize it again (after recalibrating) to deploy.
pub fn qat_finetune(
    net: &Network<f32>,
    calib: &Calibration,
    train_x: &[&[f32]],
    train_y: &[ApneaClass],
    cfg: &QatConfig,
) -> Result<Network<f32>> {
    if cfg.epochs == 0 {
        return Ok(net.clone());
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate.is_finite() && cfg.learning_rate >= 0.0) {
        return Err(Error::InvalidArgument("qat needs a positive batch size and a finite learning rate".into()));
    }
    if train_x.is_empty() || train_x.len() != train_y.len() {
        return Err(Error::InvalidArgument("qat needs a non-empty, labelled training set".into()));
    }
    if calib.activations.len() != net.layers.len() + 1 {
        return Err(Error::Quantization("calibration does not match the network".into()));
    }
    let input_fq = (!net.has_input_batchnorm()).then(|| calib.activations[0]);
    let snapped_inputs: Vec<Vec<f32>> = match input_fq {
        Some(p) => train_x
            .iter()
            .map(|x| x.iter().map(|&v| p.dequantize(p.quantize(v as f64)) as f32).collect())
            .collect(),
        None => Vec::new(),
    };
    let inputs: Vec<&[f32]> = if input_fq.is_some() {
        snapped_inputs.iter().map(|v| v.as_slice()).collect()
    } else {
        train_x.to_vec()
    };

    let mut shadow = net.clone();
    let mut work = net.clone();
    work.fake_quant = activation_points(net, calib);
    let frozen = net.has_input_batchnorm().then(|| net.slots[0].clone().unwrap());
    let bn = BnStats::from_moments(net.running_mean, net.running_var);
    let weights = [1.0; NUM_CLASSES];
    let labels: Vec<usize> = train_y.iter().map(|c| c.index()).collect();
    let opt_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        ..TrainConfig::default()
    };
    let mut opt = OptimState::new(net.param_count());
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut indexed_substream(cfg.seed, "qat-shuffle", &[epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            work.params.copy_from_slice(&shadow.params);
            snap_weights(&shadow, &mut work)?;
            let xs: Vec<&[f32]> = batch.iter().map(|&i| inputs[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let ids: Vec<u64> = batch.iter().map(|&i| i as u64).collect();
            let dropout = DropoutMode::Seeded {
                seed: cfg.seed,
                epoch: epoch as u64,
            };
            let (loss, mut grads) = work
                .batch_loss_grad(&xs, &ys, &ids, &weights, bn, dropout)
                .map_err(|e| Error::Diverged {
                    epoch,
                    reason: e.to_string(),
                })?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("qat loss {loss}"),
                });
            }
            if let Some(slot) = &frozen {
                grads[slot.weight.clone()].fill(0.0);
                grads[slot.bias.clone()].fill(0.0);
            }
            loss_sum += loss * batch.len() as f64;
            opt.apply(&opt_cfg, &mut shadow.params, &grads);
        }
        log::info!("qat epoch {epoch}: loss {:.4}", loss_sum / inputs.len() as f64);
    }
    Ok(shadow)
}
