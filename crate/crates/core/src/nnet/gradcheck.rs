use rand::seq::index::sample;
use serde::Serialize;

use super::{ParamSet, Tensor};
use crate::seed::rng;
use crate::{Error, Result};

/// Coordinates probed per tensor.
const MAX_COORDS: usize = 64;
/// Denominator floor for the relative error, so exact zeros compare cleanly.
const REL_FLOOR: f64 = 1e-8;
/// Step divisors tried when a coordinate fails: the stencil may straddle a
/// ReLU kink, where central differences are meaningless.
const REPROBE_DIVISORS: [f64; 2] = [4.0, 16.0];

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    /// (parameter name, max relative error over probed coordinates).
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Coordinates that needed a smaller step.
    pub reprobed: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients with central finite differences.
///
/// `loss_fn` returns the loss and one gradient tensor per parameter. At most
/// 64 seeded coordinates are probed per tensor. The loss is evaluated twice
/// at the base point first; any difference aborts the check. A coordinate
/// over tolerance is probed again at step/4 and step/16 and keeps its
/// smallest error; a wrong gradient fails at every step.
pub fn grad_check<F>(loss_fn: F, params: &ParamSet, step: f64, tolerance: f64, seed: u64) -> Result<GradReport>
where
    F: Fn(&ParamSet) -> Result<(f64, Vec<Tensor>)>,
{
    let (first, analytic) = loss_fn(params)?;
    let (second, _) = loss_fn(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::CheckInvalid { first, second });
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "loss function returned {} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut r = rng(seed);
    let mut probe = params.thawed_copy();
    let mut per_param = Vec::with_capacity(params.len());
    let mut reprobed = 0;
    for (i, name) in params.names().enumerate() {
        let n = params.tensor(i).numel();
        let coords: Vec<usize> = if n <= MAX_COORDS {
            (0..n).collect()
        } else {
            let mut c = sample(&mut r, n, MAX_COORDS).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst = 0.0f64;
        for c in coords {
            let orig = params.tensor(i).data()[c];
            let mut central = |h: f64| -> Result<f64> {
                probe.tensor_mut(i)?.data_mut()[c] = orig + h;
                let (plus, _) = loss_fn(&probe)?;
                probe.tensor_mut(i)?.data_mut()[c] = orig - h;
                let (minus, _) = loss_fn(&probe)?;
                probe.tensor_mut(i)?.data_mut()[c] = orig;
                Ok((plus - minus) / (2.0 * h))
            };
            let a = analytic[i].data()[c];
            let mut err = relative_error(a, central(step)?);
            if err > tolerance {
                reprobed += 1;
                for d in REPROBE_DIVISORS {
                    err = err.min(relative_error(a, central(step / d)?));
                }
            }
            worst = worst.max(err);
        }
        per_param.push((name.to_string(), worst));
    }
    let max_rel_error = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradReport {
        per_param,
        max_rel_error,
        tolerance,
        pass: max_rel_error <= tolerance,
        reprobed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn params() -> ParamSet {
        let mut p = ParamSet::new();
        p.push("a", Tensor::vector(vec![0.3, -1.2, 2.0])).unwrap();
        p.push("b", Tensor::vector((0..100).map(|i| (i + 1) as f64 * 0.01).collect())).unwrap();
        p
    }

    fn quadratic(p: &ParamSet) -> Result<(f64, Vec<Tensor>)> {
        let loss = p.tensors().map(|t| 1.5 * t.sum_squares()).sum();
        let grads = p
            .tensors()
            .map(|t| Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| 3.0 * v).collect()).unwrap())
            .collect();
        Ok((loss, grads))
    }

    #[test]
    fn quadratic_passes_tightly() {
        // central differences are exact on a quadratic, so a wide step only
        // leaves rounding error
        let rep = grad_check(quadratic, &params(), 1e-3, 1e-9, 0).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.max_rel_error <= 1e-9);
    }

    #[test]
    fn wrong_gradient_fails() {
        let wrong = |p: &ParamSet| {
            let (l, mut g) = quadratic(p)?;
            g[0].data_mut()[1] += 0.5;
            Ok((l, g))
        };
        assert!(!grad_check(wrong, &params(), 1e-5, 1e-6, 0).unwrap().pass);
    }

    #[test]
    fn kink_inside_the_stencil_is_reprobed() {
        let relu = |p: &ParamSet| {
            let x = p.tensor(0).data()[0];
            Ok((x.max(0.0), vec![Tensor::vector(vec![if x > 0.0 { 1.0 } else { 0.0 }])]))
        };
        let mut p = ParamSet::new();
        p.push("x", Tensor::vector(vec![5e-6])).unwrap();
        let rep = grad_check(relu, &p, 1e-5, 1e-6, 0).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_eq!(rep.reprobed, 1);
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let calls = Cell::new(0u32);
        let noisy = |p: &ParamSet| {
            calls.set(calls.get() + 1);
            let (l, g) = quadratic(p)?;
            Ok((l + f64::from(calls.get()) * 1e-3, g))
        };
        assert!(matches!(
            grad_check(noisy, &params(), 1e-5, 1e-6, 0),
            Err(Error::CheckInvalid { .. })
        ));
    }
}
