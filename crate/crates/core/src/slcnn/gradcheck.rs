//! Central finite-difference check of the analytic gradient, using the
//! fourth-order stencil (8(f(ε) − f(−ε)) − (f(2ε) − f(−2ε))) / 12ε.
//!
//! The loss is the training-mode batch loss (batch statistics in the input
//! batch-norm, dropout masks fixed by a seed). A perturbation that flips a
//! ReLU sign or a pooling choice crosses a kink where the central difference
//! is meaningless; such parameters are retried with ε/10 down to 1e−7 and
//! skipped if every step still crosses a kink.

use super::engine::{batch_stats, BnStats, DropoutMode, Trace};
use super::Network;
use crate::class::{ApneaClass, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max |g_a − g_n| / max(|g_a|, |g_n|, 1e−7) over checked parameters.
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub checked: usize,
    pub kink_skipped: usize,
}

const MIN_EPSILON: f64 = 1e-7;
/// Gradients smaller than this are below what a central difference of an
/// O(1) loss resolves in f64, so they are compared absolutely.
const GRAD_FLOOR: f64 = 1e-7;

fn loss_and_pattern(
    net: &Network<f64>,
    xs: &[&[f64]],
    labels: &[usize],
    stats: BnStats<f64>,
    dropout: DropoutMode,
    tr: &mut Trace<f64>,
) -> Result<(f64, Vec<u64>)> {
    let mut loss = 0.0;
    let mut patterns = Vec::with_capacity(xs.len());
    for (k, x) in xs.iter().enumerate() {
        net.forward_trace(x, stats, dropout, k as u64, tr)?;
        loss -= tr.probs()[labels[k]].ln();
        patterns.push(tr.pattern(net));
    }
    Ok((loss / xs.len() as f64, patterns))
}

pub fn grad_check(
    net: &Network<f64>,
    batch: &[Vec<f64>],
    labels: &[ApneaClass],
    epsilon: f64,
    dropout_seed: u64,
) -> Result<GradCheckReport> {
    if batch.is_empty() || batch.len() != labels.len() {
        return Err(Error::InvalidArgument("grad check needs a non-empty labelled batch".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let xs: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
    let ys: Vec<usize> = labels.iter().map(|c| c.index()).collect();
    let ids: Vec<u64> = (0..xs.len() as u64).collect();
    let stats = batch_stats(&xs);
    let dropout = DropoutMode::Seeded {
        seed: dropout_seed,
        epoch: 0,
    };
    let (_, analytic) = net.batch_loss_grad(&xs, &ys, &ids, &[1.0; NUM_CLASSES], stats, dropout)?;

    let mut tr = Trace::new(net);
    let (_, base_pattern) = loss_and_pattern(net, &xs, &ys, stats, dropout, &mut tr)?;
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: 0,
        checked: 0,
        kink_skipped: 0,
    };
    for p in 0..net.params.len() {
        let orig = net.params[p];
        let mut eps = epsilon;
        let numeric = 'step: loop {
            // five-point stencil: f(±ε) and f(±2ε), all on the base side of every kink
            let mut l = [0.0; 4];
            for (slot, h) in [eps, -eps, 2.0 * eps, -2.0 * eps].into_iter().enumerate() {
                probe.params[p] = orig + h;
                let (loss, pattern) = loss_and_pattern(&probe, &xs, &ys, stats, dropout, &mut tr)?;
                probe.params[p] = orig;
                if pattern != base_pattern {
                    eps /= 10.0;
                    if eps < MIN_EPSILON {
                        break 'step None;
                    }
                    continue 'step;
                }
                l[slot] = loss;
            }
            break Some((8.0 * (l[0] - l[1]) - (l[2] - l[3])) / (12.0 * eps));
        };
        let Some(gn) = numeric else {
            report.kink_skipped += 1;
            continue;
        };
        let ga = analytic[p];
        let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(GRAD_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = p;
        }
    }
    Ok(report)
}
