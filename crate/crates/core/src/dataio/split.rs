use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed::rng;
use crate::{Error, Result};

/// A shuffled partition of `0..n` into `k` folds whose sizes differ by at
/// most one (the first `n % k` folds hold the extra element).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn fold_count(&self) -> usize {
        self.folds.len()
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    pub fn validation(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// All indices outside `fold`, in fold order.
    pub fn training(&self, fold: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect()
    }
}

pub fn split_kfold(n: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Argument(format!("fold count must be >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Argument(format!(
            "fold count {k} exceeds dataset size {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(idx[start..start + size].to_vec());
        start += size;
    }
    Ok(FoldSplit { folds })
}

/// Shuffled (train, held-out) index split with `round(n·fraction)` held out,
/// at least one row on each side.
pub fn split_holdout(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Argument("hold-out split needs at least 2 rows".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!(
            "hold-out fraction must be in (0, 1), got {fraction}"
        )));
    }
    let held = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed));
    let test = idx.split_off(n - held);
    Ok((idx, test))
}
