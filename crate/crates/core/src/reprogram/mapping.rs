use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::nnet::Tensor;
use crate::seed::rng;
use crate::{Error, Result};

/// Disjoint many-to-one assignment of source labels to target labels.
///
/// Every target label owns `floor(K / c)` source labels; the remaining
/// `K mod c` source labels are left unassigned and their probability mass
/// is ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping {
    source_classes: usize,
    sets: Vec<Vec<usize>>,
    seed: u64,
}

/// Seeded random maximal many-to-one mapping from K source to c target labels.
pub fn make_label_mapping(source_classes: usize, target_classes: usize, seed: u64) -> Result<LabelMapping> {
    if target_classes == 0 {
        return Err(Error::Mapping("target class count must be >= 1".into()));
    }
    if source_classes < target_classes {
        return Err(Error::Mapping(format!(
            "{source_classes} source labels cannot cover {target_classes} target labels"
        )));
    }
    let per = source_classes / target_classes;
    if per < 3 {
        warn!("each target label gets only {per} source label(s); fewer than 3");
    }
    let mut order: Vec<usize> = (0..source_classes).collect();
    order.shuffle(&mut rng(seed));
    let sets = order
        .chunks(per)
        .take(target_classes)
        .map(|c| {
            let mut s = c.to_vec();
            s.sort_unstable();
            s
        })
        .collect();
    Ok(LabelMapping {
        source_classes,
        sets,
        seed,
    })
}

impl LabelMapping {
    /// Rebuilds a mapping from explicit sets, validating disjointness,
    /// equal sizes and bounds.
    pub fn from_sets(source_classes: usize, sets: Vec<Vec<usize>>, seed: u64) -> Result<Self> {
        let size = sets.first().map_or(0, Vec::len);
        if size == 0 {
            return Err(Error::Mapping("mapping needs non-empty sets".into()));
        }
        let mut seen = vec![false; source_classes];
        for s in &sets {
            if s.len() != size {
                return Err(Error::Mapping("mapping sets differ in size".into()));
            }
            for &k in s {
                if k >= source_classes || seen[k] {
                    return Err(Error::Mapping(format!("source label {k} out of range or reused")));
                }
                seen[k] = true;
            }
        }
        Ok(Self {
            source_classes,
            sets,
            seed,
        })
    }

    pub fn source_classes(&self) -> usize {
        self.source_classes
    }

    pub fn target_classes(&self) -> usize {
        self.sets.len()
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// |B_t|, identical for every target label.
    pub fn set_size(&self) -> usize {
        self.sets[0].len()
    }

    pub fn unassigned(&self) -> Vec<usize> {
        let mut used = vec![false; self.source_classes];
        self.sets.iter().flatten().for_each(|&k| used[k] = true);
        (0..self.source_classes).filter(|&k| !used[k]).collect()
    }

    /// One source label per target label (the first of each set).
    pub fn representatives(&self) -> Vec<usize> {
        self.sets.iter().map(|s| s[0]).collect()
    }

    /// `[K, c]` matrix with 1/|B_t| at (k, t) for k ∈ B_t, so that
    /// `probs · A` yields the aggregated target scores.
    pub fn aggregation_matrix(&self) -> Tensor {
        let c = self.target_classes();
        let mut a = Tensor::zeros(&[self.source_classes, c]);
        let w = 1.0 / self.set_size() as f64;
        for (t, set) in self.sets.iter().enumerate() {
            for &k in set {
                a.data_mut()[k * c + t] = w;
            }
        }
        a
    }
}

/// Target scores: the mean source probability over each assigned set.
/// Scores are not renormalized.
pub fn target_scores(source_probs: &[f64], mapping: &LabelMapping) -> Vec<f64> {
    mapping
        .sets
        .iter()
        .map(|s| s.iter().map(|&k| source_probs[k]).sum::<f64>() / s.len() as f64)
        .collect()
}
