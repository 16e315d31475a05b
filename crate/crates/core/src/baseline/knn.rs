//! Brute-force k-nearest-neighbour classification.

use rayon::prelude::*;

use super::FeatureMatrix;
use crate::class::{ApneaClass, NUM_CLASSES};
use crate::error::{Error, Result};

/// Majority vote among the `k` nearest training rows (Euclidean). Vote ties
/// go to the class with the smallest summed neighbour distance, then to the
/// lower class index. Equidistant neighbours are ordered by training index.
pub fn knn_classify(train: &FeatureMatrix, queries: &FeatureMatrix, k: usize) -> Result<Vec<ApneaClass>> {
    if train.n_rows() == 0 {
        return Err(Error::InvalidArgument("KNN needs a non-empty training set".into()));
    }
    if k == 0 || k > train.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={}",
            train.n_rows()
        )));
    }
    if queries.n_cols() != train.n_cols() {
        return Err(Error::InvalidArgument("query feature count differs from training".into()));
    }
    let out = (0..queries.n_rows())
        .into_par_iter()
        .map(|q| {
            let query = queries.row(q);
            let mut dist: Vec<(f64, usize)> = train
                .rows()
                .enumerate()
                .map(|(i, r)| {
                    let d2: f64 = r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2, i)
                })
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < dist.len() {
                dist.select_nth_unstable_by(k - 1, cmp);
            }
            let nearest = &mut dist[..k];
            nearest.sort_by(cmp);
            let mut votes = [0usize; NUM_CLASSES];
            let mut summed = [0.0f64; NUM_CLASSES];
            for &(d2, i) in nearest.iter() {
                let c = train.labels[i].index();
                votes[c] += 1;
                summed[c] += d2.sqrt();
            }
            let mut best = 0;
            for c in 1..NUM_CLASSES {
                if votes[c] > votes[best] || (votes[c] == votes[best] && votes[c] > 0 && summed[c] < summed[best]) {
                    best = c;
                }
            }
            ApneaClass::ALL[best]
        })
        .collect();
    Ok(out)
}
