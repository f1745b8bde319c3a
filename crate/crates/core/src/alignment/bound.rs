//! Empirical checks of the logit-alignment inequalities.
//!
//! For a K-way classifier f = softmax ∘ z and independent draws x, x',
//! `E‖f(x) − f(x')‖₂ ≤ 2√K · W1(μ_z, μ_z')`. Applied to reprogrammed
//! target inputs against source inputs, it bounds the target risk by the
//! source risk plus the alignment term.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{euclidean, swd, w1_exact_oracle, EmpiricalDistribution, DEFAULT_PROJECTIONS, ORACLE_MAX_POINTS};
use crate::dataio::Dataset;
use crate::nnet::{ops, Tensor};
use crate::reprogram::{reprogrammed_logits, LabelMapping, ReprogramPlan};
use crate::seed::{derive_seed, rng};
use crate::source_model::{rmse_risk, stack_rows, SourceModel, SourceRiskEstimate};
use crate::{Error, Result};

/// Slack absorbing Monte Carlo error on both sides at n = 64.
pub const DEFAULT_SLACK: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Estimator {
    /// Exact W1 through the assignment oracle.
    Exact,
    /// Sliced W2 used as a scalable stand-in for W1.
    Swd { n_projections: usize, seed: u64 },
}

impl Estimator {
    pub fn swd_default(seed: u64) -> Self {
        Estimator::Swd {
            n_projections: DEFAULT_PROJECTIONS,
            seed,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Estimator::Exact => "exact-oracle",
            Estimator::Swd { .. } => "swd-proxy",
        }
    }

    fn estimate(&self, a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<f64> {
        match *self {
            Estimator::Exact => w1_exact_oracle(a, b),
            Estimator::Swd { n_projections, seed } => Ok(swd(a, b, n_projections, 2.0, seed)?.value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub k: usize,
    pub n: usize,
    /// All-pairs mean of ‖f(x) − f(x')‖₂.
    pub lhs: f64,
    pub w1: f64,
    /// 2√K · W1.
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Alignment inequality check from precomputed logit clouds.
pub fn lemma1_from_logits(z: &Tensor, z_prime: &Tensor, slack: f64) -> Result<Lemma1Report> {
    let a = EmpiricalDistribution::new(z.clone())?;
    let b = EmpiricalDistribution::new(z_prime.clone())?;
    let w1 = w1_exact_oracle(&a, &b)?;
    let (p, q) = (ops::softmax(z)?, ops::softmax(z_prime)?);
    let (n, m) = (a.len(), b.len());
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            total += euclidean(p.row(i), q.row(j));
        }
    }
    let lhs = total / (n * m) as f64;
    let k = a.dim();
    let rhs = 2.0 * (k as f64).sqrt() * w1;
    Ok(Lemma1Report {
        k,
        n,
        lhs,
        w1,
        rhs,
        slack,
        holds: lhs <= rhs + slack,
    })
}

/// Alignment inequality check for `model` on two equal-size input batches `[n, d_S]`.
pub fn lemma1_check(model: &SourceModel, x: &Tensor, x_prime: &Tensor, slack: f64) -> Result<Lemma1Report> {
    lemma1_from_logits(&model.logits(x)?, &model.logits(x_prime)?, slack)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskBoundReport {
    pub epsilon_s: f64,
    pub k: usize,
    pub w1: f64,
    pub estimator: String,
    pub bound: f64,
    pub measured_target_risk: f64,
    pub satisfied: bool,
    pub slack: f64,
    pub n_points: usize,
    /// True when target labels own more than one source label, so the
    /// one-hot risk uses only the first source label of each set.
    pub assumption2_mismatch: bool,
    pub note: String,
}

impl RiskBoundReport {
    /// bound = ε_S + 2√K · w1; satisfied ⇔ measured ≤ bound + slack.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        epsilon_s: f64,
        k: usize,
        w1: f64,
        estimator: Estimator,
        measured_target_risk: f64,
        slack: f64,
        n_points: usize,
        assumption2_mismatch: bool,
    ) -> Self {
        let bound = epsilon_s + 2.0 * (k as f64).sqrt() * w1;
        let note = if assumption2_mismatch {
            "many-to-one mapping: target risk measured against the first source label of each set".into()
        } else {
            String::new()
        };
        Self {
            epsilon_s,
            k,
            w1,
            estimator: estimator.tag().into(),
            bound,
            measured_target_risk,
            satisfied: measured_target_risk <= bound + slack,
            slack,
            n_points,
            assumption2_mismatch,
            note,
        }
    }
}

/// Measured target risk against the bound ε_S + 2√K·W1(z(x_t + δ*), z(x_s)).
///
/// The risk is averaged over the whole target set; the alignment term uses
/// seeded equal-size subsamples of at most `n_points` from each side.
#[allow(clippy::too_many_arguments)]
pub fn theorem1_report(
    epsilon: &SourceRiskEstimate,
    model: &SourceModel,
    plan: &ReprogramPlan,
    mapping: &LabelMapping,
    source: &Dataset,
    target: &Dataset,
    estimator: Estimator,
    n_points: usize,
    slack: f64,
    seed: u64,
) -> Result<RiskBoundReport> {
    if source.length() != model.input_len() {
        return Err(Error::Config(format!(
            "source data length {} does not match model input {}",
            source.length(),
            model.input_len()
        )));
    }
    if mapping.source_classes() != model.class_count() {
        return Err(Error::Config(format!(
            "mapping covers {} source classes, model has {}",
            mapping.source_classes(),
            model.class_count()
        )));
    }
    if matches!(estimator, Estimator::Exact) && n_points > ORACLE_MAX_POINTS {
        return Err(Error::OracleSize {
            n: n_points,
            max: ORACLE_MAX_POINTS,
        });
    }
    let zt = reprogrammed_logits(model, plan, target)?;
    let pt = ops::softmax(&zt)?;
    let rep = mapping.representatives();
    let mapped: Vec<usize> = target.series().iter().map(|s| rep[s.label]).collect();
    let measured = rmse_risk(&pt, &mapped);

    let n = n_points.min(target.len()).min(source.len());
    if n == 0 {
        return Err(Error::Argument("bound report needs at least one point".into()));
    }
    let mut ti = sample(&mut rng(derive_seed(seed, "bound-target")), target.len(), n).into_vec();
    let mut si = sample(&mut rng(derive_seed(seed, "bound-source")), source.len(), n).into_vec();
    ti.sort_unstable();
    si.sort_unstable();
    let target_cloud = EmpiricalDistribution::new(zt)?.select(&ti)?;
    let xs = stack_rows(si.iter().map(|&i| source.series()[i].values.as_slice()), model.input_len())?;
    let source_cloud = EmpiricalDistribution::new(model.logits(&xs)?)?;
    let w1 = estimator.estimate(&target_cloud, &source_cloud)?;
    Ok(RiskBoundReport::assemble(
        epsilon.epsilon_s,
        model.class_count(),
        w1,
        estimator,
        measured,
        slack,
        n,
        mapping.set_size() > 1,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;
    use crate::source_model::{build_source_arch, WidthConfig};

    #[test]
    fn bound_formula() {
        let r = RiskBoundReport::assemble(0.1, 4, 0.2, Estimator::Exact, 0.5, 0.0, 64, false);
        assert!((r.bound - 0.9).abs() < 1e-15);
        assert!(r.satisfied);
        assert_eq!(r.estimator, "exact-oracle");
        let aligned = RiskBoundReport::assemble(0.3, 8, 0.0, Estimator::Exact, 0.1, 0.0, 64, true);
        assert_eq!(aligned.bound, 0.3);
        assert!(!aligned.note.is_empty());
    }

    #[test]
    fn point_masses() {
        let m = build_source_arch(4, 64, WidthConfig::default(), 8).unwrap();
        let mut r = rng(9);
        let x = Tensor::randn(&[1, 64], 1.0, &mut r);
        let y = Tensor::randn(&[1, 64], 1.0, &mut r);
        let same = lemma1_check(&m, &x, &x, 0.0).unwrap();
        assert_eq!((same.lhs, same.rhs), (0.0, 0.0));
        let rep = lemma1_check(&m, &x, &y, 0.0).unwrap();
        let (p, q) = (m.probs(&x).unwrap(), m.probs(&y).unwrap());
        let (zx, zy) = (m.logits(&x).unwrap(), m.logits(&y).unwrap());
        assert!((rep.lhs - euclidean(p.data(), q.data())).abs() < 1e-12);
        assert!((rep.rhs - 4.0 * euclidean(zx.data(), zy.data())).abs() < 1e-9);
        assert!(rep.holds);
    }

    #[test]
    fn json_field_names() {
        let r = RiskBoundReport::assemble(0.1, 4, 0.2, Estimator::swd_default(0), 0.5, 0.05, 64, false);
        let v = serde_json::to_value(&r).unwrap();
        for key in ["epsilon_s", "k", "w1", "estimator", "bound", "measured_target_risk", "satisfied"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["estimator"], "swd-proxy");
    }
}
