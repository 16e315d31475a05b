//! Deterministic grid search scored by k-fold cross-validated macro-F1.
//!
//! Every fold standardises with its own training rows. Ties between grid
//! points keep the earlier one.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{evaluate, knn_classify, logreg_fit, standardize, FeatureMatrix, LogRegConfig};
use crate::class::ApneaClass;
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchGrid {
    pub folds: usize,
    pub knn_k: Vec<usize>,
    pub logreg_l2: Vec<f64>,
    pub logreg_lr: Vec<f64>,
    pub logreg_epochs: usize,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            folds: 5,
            knn_k: vec![1, 3, 5, 7, 9, 15],
            logreg_l2: vec![1e-4, 1e-3, 1e-2],
            logreg_lr: vec![0.05, 0.2],
            logreg_epochs: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult<P> {
    pub best: P,
    pub best_score: f64,
    pub scores: Vec<(P, f64)>,
}

/// Shuffled row indices cut into `folds` near-equal test folds.
pub fn kfold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::InvalidArgument(format!("{folds} folds for {n} rows")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "kfold"));
    let mut out = vec![Vec::new(); folds];
    for (i, v) in idx.into_iter().enumerate() {
        out[i % folds].push(v);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// Mean macro-F1 over folds for a model given as a fit-and-predict closure on
/// standardised (train, test) matrices.
pub fn cross_val_macro_f1<F>(x: &FeatureMatrix, folds: usize, seed: u64, fit_predict: F) -> Result<f64>
where
    F: Fn(&FeatureMatrix, &FeatureMatrix) -> Result<Vec<ApneaClass>>,
{
    let parts = kfold_indices(x.n_rows(), folds, seed)?;
    let mut total = 0.0;
    for test_idx in &parts {
        let train_idx: Vec<usize> = (0..x.n_rows()).filter(|i| test_idx.binary_search(i).is_err()).collect();
        let (train, others, _) = standardize(&x.select_rows(&train_idx), &[&x.select_rows(test_idx)])?;
        let test = &others[0];
        let pred = fit_predict(&train, test)?;
        total += evaluate(&pred, &test.labels)?.macro_f1;
    }
    Ok(total / parts.len() as f64)
}

fn pick<P: Clone>(scores: Vec<(P, f64)>) -> Result<GridResult<P>> {
    let mut best: Option<(P, f64)> = None;
    for (p, s) in &scores {
        if best.as_ref().is_none_or(|b| *s > b.1) {
            best = Some((p.clone(), *s));
        }
    }
    let (best, best_score) = best.ok_or_else(|| Error::InvalidArgument("empty search grid".into()))?;
    Ok(GridResult {
        best,
        best_score,
        scores,
    })
}

pub fn grid_search_knn(x: &FeatureMatrix, grid: &SearchGrid, seed: u64) -> Result<GridResult<usize>> {
    let min_train = x.n_rows() - x.n_rows().div_ceil(grid.folds.max(1));
    let mut scores = Vec::new();
    for &k in grid.knn_k.iter().filter(|&&k| k >= 1 && k <= min_train) {
        let s = cross_val_macro_f1(x, grid.folds, seed, |tr, te| knn_classify(tr, te, k))?;
        log::debug!("knn k={k}: cv macro-F1 {s:.4}");
        scores.push((k, s));
    }
    pick(scores)
}

pub fn grid_search_logreg(x: &FeatureMatrix, grid: &SearchGrid, seed: u64) -> Result<GridResult<LogRegConfig>> {
    let mut scores = Vec::new();
    for &l2 in &grid.logreg_l2 {
        for &lr in &grid.logreg_lr {
            let cfg = LogRegConfig {
                l2,
                lr,
                epochs: grid.logreg_epochs,
            };
            let s = cross_val_macro_f1(x, grid.folds, seed, |tr, te| Ok(logreg_fit(tr, &cfg)?.predict(te)))?;
            log::debug!("logreg l2={l2} lr={lr}: cv macro-F1 {s:.4}");
            scores.push((cfg, s));
        }
    }
    pick(scores)
}
