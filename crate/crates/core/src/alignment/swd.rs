use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_pair, wp_1d, EmpiricalDistribution};
use crate::dataio::Dataset;
use crate::nnet::Tensor;
use crate::reprogram::{reprogrammed_logits, ReprogramPlan};
use crate::seed::{derive_indexed, derive_seed, rng};
use crate::source_model::{stack_rows, SourceModel};
use crate::{Error, Result};

pub const DEFAULT_PROJECTIONS: usize = 1000;
pub const DEFAULT_TRACK_POINTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SWDEstimate {
    pub value: f64,
    pub n_projections: usize,
    pub p: f64,
    pub seed: u64,
}

/// Unit direction number `index`; depends only on (seed, index), so
/// projections can be evaluated in any order.
fn direction(seed: u64, index: usize, dim: usize) -> Vec<f64> {
    let mut r = rng(derive_indexed(seed, "projection", index as u64));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn project(cloud: &EmpiricalDistribution, dir: &[f64]) -> Vec<f64> {
    (0..cloud.len())
        .map(|i| cloud.point(i).iter().zip(dir).map(|(a, b)| a * b).sum())
        .collect()
}

/// Sliced Wasserstein-p: the mean over `n_projections` random unit
/// directions of the 1-D Wp between the projected clouds.
pub fn swd(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    n_projections: usize,
    p: f64,
    seed: u64,
) -> Result<SWDEstimate> {
    check_pair(a, b)?;
    if n_projections == 0 {
        return Err(Error::Argument("need at least one projection".into()));
    }
    let mut total = 0.0;
    for j in 0..n_projections {
        let dir = direction(seed, j, a.dim());
        total += wp_1d(&project(a, &dir), &project(b, &dir), p)?;
    }
    Ok(SWDEstimate {
        value: total / n_projections as f64,
        n_projections,
        p,
        seed,
    })
}

/// Fixed source logit sample against which reprogrammed target logits are
/// compared once per epoch.
#[derive(Debug, Clone)]
pub struct SwdTracker {
    source: EmpiricalDistribution,
    n_projections: usize,
    p: f64,
    seed: u64,
}

impl SwdTracker {
    /// Draws a seeded subsample of at most `n_points` source series and
    /// caches their logits.
    pub fn new(model: &SourceModel, source: &Dataset, n_points: usize, n_projections: usize, seed: u64) -> Result<Self> {
        let n = n_points.min(source.len());
        if n == 0 {
            return Err(Error::Argument("SWD tracking needs at least one source point".into()));
        }
        let idx = sample(&mut rng(derive_seed(seed, "swd-source")), source.len(), n).into_vec();
        let x = stack_rows(idx.iter().map(|&i| source.series()[i].values.as_slice()), model.input_len())?;
        Ok(Self {
            source: EmpiricalDistribution::new(model.logits(&x)?)?,
            n_projections,
            p: 2.0,
            seed,
        })
    }

    pub fn with_default_sizes(model: &SourceModel, source: &Dataset, seed: u64) -> Result<Self> {
        Self::new(model, source, DEFAULT_TRACK_POINTS, DEFAULT_PROJECTIONS, seed)
    }

    pub fn source_points(&self) -> &EmpiricalDistribution {
        &self.source
    }

    /// SWD between `target_logits` and the cached source sample, after
    /// trimming both to a common size with a fixed seed.
    pub fn measure(&self, target_logits: &Tensor) -> Result<f64> {
        let target = EmpiricalDistribution::new(target_logits.clone())?;
        let n = target.len().min(self.source.len());
        let source = self.source.select(&(0..n).collect::<Vec<_>>())?;
        let target = if target.len() > n {
            let mut idx = sample(&mut rng(derive_seed(self.seed, "swd-target")), target.len(), n).into_vec();
            idx.sort_unstable();
            target.select(&idx)?
        } else {
            target
        };
        Ok(swd(&target, &source, self.n_projections, self.p, derive_seed(self.seed, "swd-directions"))?.value)
    }
}

/// Per-epoch SWD between the reprogrammed target cloud (eval mode) and the
/// tracker's source sample.
pub fn swd_per_epoch_hook(
    tracker: &SwdTracker,
    model: &SourceModel,
    plan: &ReprogramPlan,
    target: &Dataset,
) -> Result<f64> {
    tracker.measure(&reprogrammed_logits(model, plan, target)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(seed: u64, n: usize, k: usize, scale: f64) -> EmpiricalDistribution {
        EmpiricalDistribution::new(Tensor::randn(&[n, k], scale, &mut rng(seed))).unwrap()
    }

    #[test]
    fn zero_on_identical_and_symmetric() {
        let a = cloud(1, 30, 4, 1.0);
        let b = cloud(2, 30, 4, 2.0);
        assert_eq!(swd(&a, &a, 200, 2.0, 5).unwrap().value, 0.0);
        let ab = swd(&a, &b, 200, 2.0, 5).unwrap().value;
        let ba = swd(&b, &a, 200, 2.0, 5).unwrap().value;
        assert!(ab > 0.0);
        assert_eq!(ab, ba);
        assert_eq!(ab.to_bits(), swd(&a, &b, 200, 2.0, 5).unwrap().value.to_bits());
    }

    #[test]
    fn directions_are_unit() {
        for j in 0..20 {
            let d = direction(3, j, 7);
            assert!((d.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
