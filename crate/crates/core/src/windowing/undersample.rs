use rand::seq::index::sample;

use super::WindowSet;
use crate::class::ApneaClass;
use crate::error::{Error, Result};
use crate::rng::substream;

/// Normal share after undersampling for the classical-feature pipeline.
pub const CLASSICAL_NORMAL_SHARE: f64 = 0.64;
/// Normal share after undersampling for the CNN pipeline.
pub const CNN_NORMAL_SHARE: f64 = 0.71;

/// Number of Normal windows to keep so that they make up `normal_share` of the
/// result while every minority window is retained. Capped at what is available.
pub fn normal_keep_for_share(counts: [usize; 4], normal_share: f64) -> usize {
    let minority: usize = counts[1..].iter().sum();
    let share = normal_share.clamp(0.0, 0.999);
    let keep = (minority as f64 * share / (1.0 - share)).round() as usize;
    keep.min(counts[0])
}

/// Keeps every OSA/CSA/MSA window and exactly `normal_keep` Normal windows
/// drawn uniformly without replacement. Output preserves input order.
pub fn undersample(windows: &WindowSet, normal_keep: usize, seed: u64) -> Result<WindowSet> {
    let normals: Vec<usize> = windows
        .windows
        .iter()
        .enumerate()
        .filter(|(_, w)| w.label == ApneaClass::Normal)
        .map(|(i, _)| i)
        .collect();
    if normal_keep > normals.len() {
        return Err(Error::NotEnoughNormals {
            requested: normal_keep,
            available: normals.len(),
        });
    }
    let mut rng = substream(seed, "undersample");
    let mut keep = vec![false; windows.len()];
    for w in windows.windows.iter().enumerate().filter(|(_, w)| w.label != ApneaClass::Normal) {
        keep[w.0] = true;
    }
    for j in sample(&mut rng, normals.len(), normal_keep).into_iter() {
        keep[normals[j]] = true;
    }
    let indices: Vec<usize> = (0..windows.len()).filter(|&i| keep[i]).collect();
    Ok(windows.select(&indices))
}
