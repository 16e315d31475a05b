//! Recursive feature elimination with logistic regression as the base model.
//!
//! Each round refits on the surviving columns and drops the one whose weight
//! column (across the four classes) has the smallest L2 norm; ties drop the
//! lower original index.

use super::{logreg_fit, FeatureMatrix, LogRegConfig};
use crate::class::NUM_CLASSES;
use crate::error::{Error, Result};

/// Target feature count for WIN-11.
pub const DEFAULT_K_SHORT: usize = 15;
/// Target feature count for WIN-61 and WIN-MIX.
pub const DEFAULT_K_LONG: usize = 40;

/// Original column indices in elimination order, stopping once `k` remain.
pub fn rfe_ranking(x: &FeatureMatrix, k: usize, cfg: &LogRegConfig) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("RFE target count must be at least 1".into()));
    }
    if k > x.n_cols() {
        return Err(Error::InvalidArgument(format!(
            "RFE target {k} exceeds the {} available features",
            x.n_cols()
        )));
    }
    let mut alive: Vec<usize> = (0..x.n_cols()).collect();
    let mut eliminated = Vec::with_capacity(x.n_cols() - k);
    while alive.len() > k {
        let model = logreg_fit(&x.select_columns(&alive), cfg)?;
        let d = alive.len();
        let norms: Vec<f64> = (0..d)
            .map(|j| (0..NUM_CLASSES).map(|c| model.weights[c * d + j].powi(2)).sum::<f64>())
            .collect();
        let mut worst = 0;
        for j in 1..d {
            if norms[j] < norms[worst] {
                worst = j;
            }
        }
        eliminated.push(alive.remove(worst));
    }
    Ok(eliminated)
}

/// Surviving original column indices, ascending.
pub fn rfe(x: &FeatureMatrix, k: usize, cfg: &LogRegConfig) -> Result<Vec<usize>> {
    let dropped = rfe_ranking(x, k, cfg)?;
    Ok((0..x.n_cols()).filter(|c| !dropped.contains(c)).collect())
}
