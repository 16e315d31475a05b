//! Classical pipeline: standardisation, recursive feature elimination,
//! KNN and multinomial logistic regression, plus the metrics shared by every
//! model in the crate.

mod knn;
mod logreg;
mod metrics;
mod rfe;
mod search;

pub use knn::knn_classify;
pub use logreg::{logreg_fit, LogRegConfig, LogisticRegression};
pub use metrics::{evaluate, evaluate_indices, ClassMetrics, Metrics, METRICS_SCHEMA_VERSION};
pub use rfe::{rfe, rfe_ranking, DEFAULT_K_LONG, DEFAULT_K_SHORT};
pub use search::{cross_val_macro_f1, grid_search_knn, grid_search_logreg, kfold_indices, GridResult, SearchGrid};

use serde::{Deserialize, Serialize};

use crate::class::ApneaClass;
use crate::error::{Error, Result};
use crate::hrv::FeatureTable;

/// Dense row-major feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    data: Vec<f64>,
    n_rows: usize,
    pub labels: Vec<ApneaClass>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, rows: &[Vec<f64>], labels: Vec<ApneaClass>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let cols = names.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::InvalidArgument(format!("row {i} has {} values, expected {cols}", r.len())));
            }
            if let Some(v) = r.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("row {i} holds non-finite value {v}")));
            }
            data.extend_from_slice(r);
        }
        Ok(FeatureMatrix {
            names,
            data,
            n_rows: rows.len(),
            labels,
        })
    }

    pub fn from_table(table: &FeatureTable) -> Result<Self> {
        Self::new(table.names.clone(), &table.rows, table.labels.clone())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows).map(|i| self.row(i))
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.n_cols());
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            names: self.names.clone(),
            data,
            n_rows: indices.len(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn select_columns(&self, columns: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.n_rows * columns.len());
        for r in self.rows() {
            data.extend(columns.iter().map(|&c| r[c]));
        }
        FeatureMatrix {
            names: columns.iter().map(|&c| self.names[c].clone()).collect(),
            data,
            n_rows: self.n_rows,
            labels: self.labels.clone(),
        }
    }
}

/// Per-feature z-score parameters fitted on a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features with zero training spread, left unscaled.
    pub passthrough: Vec<bool>,
}

impl Scaler {
    /// Population mean and standard deviation of each column.
    pub fn fit(train: &FeatureMatrix) -> Result<Self> {
        if train.n_rows() == 0 {
            return Err(Error::InvalidArgument("cannot standardise an empty training matrix".into()));
        }
        let n = train.n_rows() as f64;
        let c = train.n_cols();
        let mut mean = vec![0.0; c];
        for r in train.rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for r in train.rows() {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        let passthrough = std.iter().map(|s| !(*s > 0.0)).collect();
        Ok(Scaler { mean, std, passthrough })
    }

    pub fn transform(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut out = x.clone();
        let c = x.n_cols();
        for (i, v) in out.data.iter_mut().enumerate() {
            let j = i % c;
            if !self.passthrough[j] {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

/// Fits a [`Scaler`] on `train` and applies it to `train` and every matrix in
/// `others`.
pub fn standardize(train: &FeatureMatrix, others: &[&FeatureMatrix]) -> Result<(FeatureMatrix, Vec<FeatureMatrix>, Scaler)> {
    let scaler = Scaler::fit(train)?;
    for o in others {
        if o.n_cols() != train.n_cols() {
            return Err(Error::InvalidArgument("feature count differs between matrices".into()));
        }
    }
    Ok((
        scaler.transform(train),
        others.iter().map(|o| scaler.transform(o)).collect(),
        scaler,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(v: &[f64]) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = v.iter().map(|x| vec![*x]).collect();
        FeatureMatrix::new(vec!["f".into()], &rows, vec![ApneaClass::Normal; v.len()]).unwrap()
    }

    #[test]
    fn population_std_convention() {
        let (z, _, s) = standardize(&column(&[1.0, 2.0, 3.0]), &[]).unwrap();
        let expect = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((z.row(0)[0] + expect).abs() < 1e-12);
        assert_eq!(z.row(1)[0], 0.0);
        assert!((z.row(2)[0] - expect).abs() < 1e-12);
        assert!(!s.passthrough[0]);
    }

    #[test]
    fn constant_column_passes_through() {
        let (z, _, s) = standardize(&column(&[4.0, 4.0]), &[]).unwrap();
        assert_eq!(z.row(0)[0], 4.0);
        assert!(s.passthrough[0]);
    }

    #[test]
    fn rejects_non_finite() {
        let rows = vec![vec![f64::NAN]];
        assert!(FeatureMatrix::new(vec!["f".into()], &rows, vec![ApneaClass::Osa]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn test_rows_never_touch_the_scaler(
            train in proptest::collection::vec(-100.0f64..100.0, 2..40),
            test_a in proptest::collection::vec(-1e3f64..1e3, 1..10),
            test_b in proptest::collection::vec(-1e3f64..1e3, 1..10),
        ) {
            let (_, ta, sa) = standardize(&column(&train), &[&column(&test_a)]).unwrap();
            let (_, _, sb) = standardize(&column(&train), &[&column(&test_b)]).unwrap();
            proptest::prop_assert_eq!(&sa, &sb);
            let expect = sa.transform(&column(&test_a));
            proptest::prop_assert_eq!(&ta[0], &expect);
        }
    }
}
