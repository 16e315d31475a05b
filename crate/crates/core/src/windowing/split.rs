use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::WindowSet;
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    WindowRandom,
    SubjectHoldout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub test_frac: f64,
    pub val_frac_of_train: f64,
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.8,
            test_frac: 0.2,
            val_frac_of_train: 0.1,
            seed: 0,
            mode: SplitMode::WindowRandom,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if (self.train_frac + self.test_frac - 1.0).abs() > 1e-9
            || !(0.0..1.0).contains(&self.test_frac)
            || !(0.0..1.0).contains(&self.val_frac_of_train)
        {
            return Err(Error::Split(format!(
                "fractions must satisfy train + test = 1 and lie in [0, 1): {self:?}"
            )));
        }
        Ok(())
    }
}

/// Disjoint, exhaustive partition of `0..n`; each part in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions items given their group (subject) keys.
///
/// `window-random` shuffles all items and cuts test off first, then takes the
/// validation share out of the remaining training items. `subject-holdout`
/// assigns whole subjects, in shuffled order, to test and then validation
/// until each reaches its target share; the rest train.
pub fn split_indices(groups: &[&str], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let n = groups.len();
    if n == 0 {
        return Err(Error::Split("cannot split an empty set".into()));
    }
    let mut rng = substream(spec.seed, "split");
    let mut out = match spec.mode {
        SplitMode::WindowRandom => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let n_test = (spec.test_frac * n as f64).round() as usize;
            let n_val = (spec.val_frac_of_train * (n - n_test) as f64).round() as usize;
            SplitIndices {
                test: perm[..n_test].to_vec(),
                val: perm[n_test..n_test + n_val].to_vec(),
                train: perm[n_test + n_val..].to_vec(),
            }
        }
        SplitMode::SubjectHoldout => {
            let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, g) in groups.iter().enumerate() {
                by_subject.entry(g).or_default().push(i);
            }
            if by_subject.len() < 3 {
                return Err(Error::Split(format!(
                    "subject holdout needs at least 3 subjects, found {}",
                    by_subject.len()
                )));
            }
            let mut subjects: Vec<Vec<usize>> = by_subject.into_values().collect();
            subjects.shuffle(&mut rng);
            let total = n as f64;
            let mut remaining = subjects.len();
            let mut take = |target: f64, pool: &mut std::vec::IntoIter<Vec<usize>>, reserve: usize| {
                let mut part = Vec::new();
                while remaining > reserve {
                    if !part.is_empty() && part.len() as f64 >= target {
                        break;
                    }
                    match pool.next() {
                        Some(s) => {
                            part.extend(s);
                            remaining -= 1;
                        }
                        None => break,
                    }
                }
                part
            };
            let mut pool = subjects.into_iter();
            let test = take(spec.test_frac * total, &mut pool, 2);
            let val = take(spec.val_frac_of_train * (total - test.len() as f64), &mut pool, 1);
            let train: Vec<usize> = pool.flatten().collect();
            SplitIndices { train, val, test }
        }
    };
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Splits a window set into (train, val, test).
pub fn split(windows: &WindowSet, spec: &SplitSpec) -> Result<(WindowSet, WindowSet, WindowSet)> {
    let groups: Vec<&str> = windows.windows.iter().map(|w| w.subject_id.as_str()).collect();
    let idx = split_indices(&groups, spec)?;
    Ok((windows.select(&idx.train), windows.select(&idx.val), windows.select(&idx.test)))
}
