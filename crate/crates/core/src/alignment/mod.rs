//! Optimal-transport estimators between logit clouds, the risk-bound
//! harness built on them, and cross-dataset classification metrics.

mod assignment;
mod bound;
mod metrics;
mod ot;
mod swd;

pub use assignment::min_cost_assignment;
pub use bound::{
    lemma1_check, lemma1_from_logits, theorem1_report, Estimator, Lemma1Report, RiskBoundReport,
    DEFAULT_SLACK,
};
pub use metrics::{metrics, DatasetMetrics, DatasetResult, MetricsReport};
pub use ot::{w1_1d, wp_1d};
pub use swd::{swd, swd_per_epoch_hook, SWDEstimate, SwdTracker, DEFAULT_PROJECTIONS};

use crate::nnet::Tensor;
use crate::{Error, Result};

/// Largest cloud the exact assignment oracle accepts.
pub const ORACLE_MAX_POINTS: usize = 256;

/// Uniformly weighted point cloud (`n` rows of dimension `K`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    points: Tensor,
}

impl EmpiricalDistribution {
    pub fn new(points: Tensor) -> Result<Self> {
        if points.shape().len() != 2 || points.shape()[0] == 0 || points.shape()[1] == 0 {
            return Err(Error::Argument(format!(
                "empirical distribution needs an [n >= 1, K >= 1] matrix, got {:?}",
                points.shape()
            )));
        }
        if !points.is_finite() {
            return Err(Error::Argument("empirical distribution has non-finite entries".into()));
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("rows of unequal dimension".into()));
        }
        Self::new(Tensor::new(vec![rows.len(), k], rows.concat())?)
    }

    pub fn len(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.shape()[1]
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    /// Rows selected by `indices`.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let k = self.dim();
        let mut data = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            data.extend_from_slice(self.point(i));
        }
        Self::new(Tensor::new(vec![indices.len(), k], data)?)
    }
}

fn check_pair(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "clouds must have equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::Argument(format!(
            "clouds must share a dimension, got {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Exact empirical W1 between equal-size clouds via minimum-cost perfect
/// matching on Euclidean costs.
pub fn w1_exact_oracle(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    if n > ORACLE_MAX_POINTS {
        return Err(Error::OracleSize {
            n,
            max: ORACLE_MAX_POINTS,
        });
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = euclidean(a.point(i), b.point(j));
        }
    }
    let (_, total) = min_cost_assignment(&cost, n)?;
    Ok(total / n as f64)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
