//! Mini-batch training with Adam or SGD with momentum.
//!
//! The input batch-norm normalises with batch statistics during training;
//! its inference moments are the exact mean and population variance of the
//! whole training set, computed once before the first epoch. Validation runs
//! in inference mode after every epoch and the parameters from the epoch
//! with the best validation macro-F1 are restored at the end.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::engine::{batch_stats, moments, DropoutMode};
use super::Network;
use crate::baseline::evaluate;
use crate::class::{ApneaClass, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::indexed_substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Adam,
    SgdMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Momentum for SGD; ignored by Adam.
    pub momentum: f64,
    pub seed: u64,
    /// Stop after this many epochs without a better validation macro-F1;
    /// 0 disables early stopping.
    pub patience: usize,
    /// Weight each sample's loss by n / (classes · n_class).
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 256,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            momentum: 0.9,
            seed: 0,
            patience: 0,
            class_weighting: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,val_acc,val_macro_f1";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.9},{:.9},{:.9},{:.9}",
                r.epoch, r.train_loss, r.val_loss, r.val_acc, r.val_macro_f1
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub history: History,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub(crate) struct OptimState {
    m: Vec<f32>,
    v: Vec<f32>,
    step: i32,
}

impl OptimState {
    pub(crate) fn new(n: usize) -> Self {
        OptimState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub(crate) fn apply(&mut self, cfg: &TrainConfig, params: &mut [f32], grads: &[f32]) {
        let lr = cfg.learning_rate as f32;
        self.step += 1;
        match cfg.optimizer {
            Optimizer::Adam => {
                let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
                let c1 = 1.0 - b1.powi(self.step);
                let c2 = 1.0 - b2.powi(self.step);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
            Optimizer::SgdMomentum => {
                let mu = cfg.momentum as f32;
                for ((p, g), m) in params.iter_mut().zip(grads).zip(&mut self.m) {
                    *m = mu * *m + g;
                    *p -= lr * *m;
                }
            }
        }
    }
}

fn class_weights(labels: &[ApneaClass], enabled: bool) -> [f64; NUM_CLASSES] {
    if !enabled {
        return [1.0; NUM_CLASSES];
    }
    let mut counts = [0usize; NUM_CLASSES];
    for l in labels {
        counts[l.index()] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    counts.map(|c| if c == 0 { 0.0 } else { labels.len() as f64 / (present * c as f64) })
}

/// Mean cross-entropy, accuracy and macro-F1 of `net` in inference mode.
pub fn evaluate_network(net: &Network<f32>, xs: &[&[f32]], ys: &[ApneaClass]) -> Result<(f64, f64, f64)> {
    let probs = net.predict_proba(xs)?;
    let mut loss = 0.0;
    let mut pred = Vec::with_capacity(xs.len());
    for (p, y) in probs.iter().zip(ys) {
        loss -= (p[y.index()] as f64).max(f64::MIN_POSITIVE).ln();
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if p[c] > p[best] {
                best = c;
            }
        }
        pred.push(ApneaClass::ALL[best]);
    }
    let m = evaluate(&pred, ys)?;
    Ok((loss / xs.len() as f64, m.accuracy, m.macro_f1))
}

/// Trains `net` in place of a copy and returns the best-validation network.
pub fn train(
    mut net: Network<f32>,
    train_x: &[&[f32]],
    train_y: &[ApneaClass],
    val_x: &[&[f32]],
    val_y: &[ApneaClass],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_x.is_empty() || val_x.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    if train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(Error::InvalidArgument("windows and labels differ in length".into()));
    }
    if let Some(x) = train_x.iter().chain(val_x).find(|x| x.len() != net.input_len()) {
        return Err(Error::InvalidArgument(format!(
            "window of {} samples does not fit the network input of {}",
            x.len(),
            net.input_len()
        )));
    }
    if net.has_input_batchnorm() {
        let (mean, var) = moments(train_x.iter().map(|x| x.iter().map(|&v| v as f64)));
        net.running_mean = mean as f32;
        net.running_var = var as f32;
    }
    let weights = class_weights(train_y, cfg.class_weighting);
    let labels: Vec<usize> = train_y.iter().map(|c| c.index()).collect();
    let mut opt = OptimState::new(net.param_count());
    let mut history = History::default();
    let mut best: Option<(f64, usize, Vec<f32>)> = None;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_x.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut indexed_substream(cfg.seed, "shuffle", &[epoch as u64]));
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f32]> = batch.iter().map(|&i| train_x[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let ids: Vec<u64> = batch.iter().map(|&i| i as u64).collect();
            let w: f64 = ys.iter().map(|&y| weights[y]).sum();
            let stats = batch_stats(&xs);
            let dropout = DropoutMode::Seeded {
                seed: cfg.seed,
                epoch: epoch as u64,
            };
            let (loss, grads) = net
                .batch_loss_grad(&xs, &ys, &ids, &weights, stats, dropout)
                .map_err(|e| Error::Diverged {
                    epoch,
                    reason: e.to_string(),
                })?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("training loss {loss} with learning rate {}", cfg.learning_rate),
                });
            }
            loss_sum += loss * w;
            weight_sum += w;
            opt.apply(cfg, &mut net.params, &grads);
        }
        let (val_loss, val_acc, val_macro_f1) = evaluate_network(&net, val_x, val_y).map_err(|e| match e {
            Error::NonFiniteActivation { layer } => Error::Diverged {
                epoch,
                reason: format!("non-finite activation at layer {layer} during validation"),
            },
            e => e,
        })?;
        let row = HistoryRow {
            epoch,
            train_loss: loss_sum / weight_sum,
            val_loss,
            val_acc,
            val_macro_f1,
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_loss {:.4} val_acc {:.4} val_macro_f1 {:.4}",
            row.train_loss,
            row.val_loss,
            row.val_acc,
            row.val_macro_f1
        );
        history.rows.push(row);
        if best.as_ref().is_none_or(|b| val_macro_f1 > b.0) {
            best = Some((val_macro_f1, epoch, net.params.clone()));
        }
        let best_epoch = best.as_ref().unwrap().1;
        if cfg.patience > 0 && epoch - best_epoch >= cfg.patience && epoch < cfg.epochs {
            stopped_early = true;
            log::info!("early stop after epoch {epoch} (best {best_epoch})");
            break;
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    net.params = params;
    Ok(TrainOutcome {
        network: net,
        history,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{build, TopologyConfig};
    use super::*;
    use rand::Rng;

    /// Four classes told apart by a bump position and sign.
    fn toy(n: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<ApneaClass>) {
        let mut rng = crate::rng::substream(seed, "toy");
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let c = ApneaClass::ALL[i % 4];
            let centre = [8.0, 24.0, 40.0, 56.0][c.index()];
            let x = (0..64)
                .map(|t| {
                    let d = (t as f32 - centre) / 3.0;
                    (-d * d).exp() + 0.1 * rng.gen_range(-1.0f32..1.0)
                })
                .collect();
            xs.push(x);
            ys.push(c);
        }
        (xs, ys)
    }

    fn small_topology() -> TopologyConfig {
        TopologyConfig {
            input_len: 64,
            conv_filters: vec![4, 4],
            conv_kernels: vec![5, 5],
            pool_size: 2,
            dropout: 0.1,
            input_batchnorm: true,
        }
    }

    #[test]
    fn learns_toy_problem_and_is_reproducible() {
        let (tx, ty) = toy(256, 1);
        let (vx, vy) = toy(64, 2);
        let tx: Vec<&[f32]> = tx.iter().map(Vec::as_slice).collect();
        let vx: Vec<&[f32]> = vx.iter().map(Vec::as_slice).collect();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-2,
            seed: 4,
            ..Default::default()
        };
        let net = build(&small_topology(), 4).unwrap();
        let a = train(net.clone(), &tx, &ty, &vx, &vy, &cfg).unwrap();
        assert!(a.history.rows.iter().map(|r| r.val_acc).fold(0.0, f64::max) >= 0.95);
        let b = train(net, &tx, &ty, &vx, &vy, &cfg).unwrap();
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        assert_eq!(a.network.params, b.network.params);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (tx, ty) = toy(64, 1);
        let (vx, vy) = toy(32, 2);
        let tx: Vec<&[f32]> = tx.iter().map(Vec::as_slice).collect();
        let vx: Vec<&[f32]> = vx.iter().map(Vec::as_slice).collect();
        let net = build(&small_topology(), 9).unwrap();
        for optimizer in [Optimizer::Adam, Optimizer::SgdMomentum] {
            let cfg = TrainConfig {
                epochs: 4,
                batch_size: 16,
                learning_rate: 0.0,
                optimizer,
                ..Default::default()
            };
            let out = train(net.clone(), &tx, &ty, &vx, &vy, &cfg).unwrap();
            assert_eq!(out.network.params, net.params);
            let r = &out.history.rows;
            assert!(r.iter().all(|x| x.val_loss == r[0].val_loss && x.val_macro_f1 == r[0].val_macro_f1));
        }
    }

    #[test]
    fn divergence_is_reported() {
        let (tx, ty) = toy(64, 1);
        let tx: Vec<&[f32]> = tx.iter().map(Vec::as_slice).collect();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e30,
            optimizer: Optimizer::SgdMomentum,
            ..Default::default()
        };
        let net = build(&small_topology(), 1).unwrap();
        assert!(matches!(
            train(net, &tx, &ty, &tx, &ty, &cfg),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn history_csv_header() {
        let h = History {
            rows: vec![HistoryRow {
                epoch: 1,
                train_loss: 1.0,
                val_loss: 0.5,
                val_acc: 0.75,
                val_macro_f1: 0.5,
            }],
        };
        assert_eq!(h.to_csv(), "epoch,train_loss,val_loss,val_acc,val_macro_f1\n1,1.000000000,0.500000000,0.750000000,0.500000000\n");
    }
}
