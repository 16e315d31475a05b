//! Classification metrics with macro averaging over all four classes.
//!
//! Precision and recall with a zero denominator are 0, so a class that is
//! never predicted or never present still counts toward the macro means.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::class::{ApneaClass, NUM_CLASSES};
use crate::error::{Error, Result};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: [ClassMetrics; NUM_CLASSES],
    /// Rows are the true class, columns the prediction.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn evaluate(pred: &[ApneaClass], truth: &[ApneaClass]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate zero samples".into()));
    }
    let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (p, t) in pred.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
    }
    let per_class: [ClassMetrics; NUM_CLASSES] = std::array::from_fn(|c| {
        let tp = confusion[c][c];
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = (0..NUM_CLASSES).map(|r| confusion[r][c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support,
        }
    });
    let trace: u64 = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    let macro_of = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / NUM_CLASSES as f64;
    Ok(Metrics {
        schema_version: METRICS_SCHEMA_VERSION,
        accuracy: trace as f64 / pred.len() as f64,
        macro_precision: macro_of(|m| m.precision),
        macro_recall: macro_of(|m| m.recall),
        macro_f1: macro_of(|m| m.f1),
        per_class,
        confusion,
    })
}

/// Same as [`evaluate`] on raw class indices, rejecting values outside the
/// class enum.
pub fn evaluate_indices(pred: &[usize], truth: &[usize]) -> Result<Metrics> {
    let conv = |v: &[usize]| -> Result<Vec<ApneaClass>> {
        v.iter().map(|&i| ApneaClass::from_index(i)).collect()
    };
    evaluate(&conv(pred)?, &conv(truth)?)
}

impl Metrics {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned confusion table plus the headline numbers.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12}{:>8}{:>8}{:>8}{:>8}", "truth\\pred", "Normal", "OSA", "CSA", "MSA");
        for (c, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{:<12}", ApneaClass::ALL[c].name());
            for v in row {
                let _ = write!(s, "{v:>8}");
            }
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "accuracy {:.4}  macro-precision {:.4}  macro-recall {:.4}  macro-F1 {:.4}",
            self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ApneaClass::*;

    #[test]
    fn perfect_predictions() {
        let t = vec![Normal, Osa, Csa, Msa, Osa];
        let m = evaluate(&t, &t).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        for c in 0..4 {
            for r in 0..4 {
                assert_eq!(m.confusion[r][c] > 0, r == c);
            }
        }
    }

    #[test]
    fn all_normal_predictions() {
        let mut truth = Vec::new();
        for (c, n) in [(Normal, 64), (Osa, 18), (Csa, 14), (Msa, 4)] {
            truth.extend(std::iter::repeat_n(c, n));
        }
        let m = evaluate(&[Normal; 100], &truth).unwrap();
        assert!((m.accuracy - 0.64).abs() < 1e-12);
        let f1_normal = 2.0 * 0.64 / 1.64;
        assert!((m.macro_f1 - f1_normal / 4.0).abs() < 1e-12);
        assert!((m.macro_f1 - 0.195).abs() < 1e-3);
    }

    #[test]
    fn absent_classes_count_as_zero() {
        let m = evaluate(&[Osa], &[Osa]).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 0.25);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(evaluate(&[], &[]).is_err());
        assert!(evaluate(&[Osa], &[]).is_err());
        assert!(matches!(evaluate_indices(&[4], &[0]), Err(Error::InvalidLabel(4))));
    }

    #[test]
    fn json_and_text() {
        let m = evaluate(&[Normal, Osa], &[Normal, Csa]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["confusion"][2][1], 1);
        let text = m.render_text();
        assert!(text.lines().nth(3).unwrap().starts_with("CSA"));
    }

    proptest::proptest! {
        #[test]
        fn invariants(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200), rot in 0usize..200) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
            let m = evaluate_indices(&p, &t).unwrap();
            let total: u64 = m.confusion.iter().flatten().sum();
            proptest::prop_assert_eq!(total as usize, p.len());
            for c in 0..4 {
                let support = t.iter().filter(|&&x| x == c).count() as u64;
                proptest::prop_assert_eq!(m.confusion[c].iter().sum::<u64>(), support);
            }
            let k = rot % p.len();
            let (mut p2, mut t2) = (p.clone(), t.clone());
            p2.rotate_left(k);
            t2.rotate_left(k);
            proptest::prop_assert_eq!(evaluate_indices(&p2, &t2).unwrap(), m);
        }
    }
}
