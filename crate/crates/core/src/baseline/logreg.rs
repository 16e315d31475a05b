//! Multinomial softmax regression trained by full-batch gradient descent.
//!
//! Loss = mean cross-entropy + ½·l2·‖W‖² (bias not penalised). Weights start
//! at zero, so a fit is a pure function of data and hyperparameters.

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::class::{ApneaClass, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegConfig {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1e-3,
            epochs: 300,
            lr: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub n_features: usize,
    /// `NUM_CLASSES × n_features`, row-major by class.
    pub weights: Vec<f64>,
    pub bias: [f64; NUM_CLASSES],
    /// Training loss before each update, then after the last one.
    pub loss_history: Vec<f64>,
}

impl LogisticRegression {
    fn zeros(d: usize) -> Self {
        LogisticRegression {
            n_features: d,
            weights: vec![0.0; NUM_CLASSES * d],
            bias: [0.0; NUM_CLASSES],
            loss_history: Vec::new(),
        }
    }

    pub fn class_weights(&self, class: usize) -> &[f64] {
        &self.weights[class * self.n_features..(class + 1) * self.n_features]
    }

    pub fn predict_proba_row(&self, row: &[f64]) -> [f64; NUM_CLASSES] {
        let mut z = [0.0; NUM_CLASSES];
        for (c, zc) in z.iter_mut().enumerate() {
            *zc = self.bias[c] + self.class_weights(c).iter().zip(row).map(|(w, x)| w * x).sum::<f64>();
        }
        softmax(z)
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<ApneaClass> {
        x.rows()
            .map(|r| {
                let p = self.predict_proba_row(r);
                ApneaClass::ALL[argmax(&p)]
            })
            .collect()
    }
}

fn softmax(z: [f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// First index of the maximum.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn logreg_fit(x: &FeatureMatrix, cfg: &LogRegConfig) -> Result<LogisticRegression> {
    if x.n_rows() == 0 {
        return Err(Error::InvalidArgument("cannot fit on an empty matrix".into()));
    }
    if !(cfg.lr > 0.0) || !(cfg.l2 >= 0.0) {
        return Err(Error::InvalidArgument("logistic regression needs lr > 0 and l2 ≥ 0".into()));
    }
    let d = x.n_cols();
    let n = x.n_rows() as f64;
    let mut model = LogisticRegression::zeros(d);
    let mut grad_w = vec![0.0; NUM_CLASSES * d];
    for epoch in 0..=cfg.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = [0.0; NUM_CLASSES];
        let mut loss = 0.0;
        for (r, label) in x.rows().zip(&x.labels) {
            let mut p = model.predict_proba_row(r);
            let y = label.index();
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            p[y] -= 1.0;
            for (c, pc) in p.iter().enumerate() {
                grad_b[c] += pc;
                for (g, v) in grad_w[c * d..(c + 1) * d].iter_mut().zip(r) {
                    *g += pc * v;
                }
            }
        }
        let penalty: f64 = model.weights.iter().map(|w| w * w).sum::<f64>() * 0.5 * cfg.l2;
        let loss = loss / n + penalty;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("logistic regression loss {loss} (lr {}, l2 {})", cfg.lr, cfg.l2),
            });
        }
        model.loss_history.push(loss);
        if epoch == cfg.epochs {
            break;
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= cfg.lr * (g / n + cfg.l2 * *w);
        }
        for (b, g) in model.bias.iter_mut().zip(&grad_b) {
            *b -= cfg.lr * g / n;
        }
    }
    Ok(model)
}
