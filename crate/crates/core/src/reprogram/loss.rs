use super::{check_model_plan, DropMask, LabelMapping, ReprogramPlan};
use crate::nnet::{Graph, Tensor};
use crate::source_model::SourceModel;
use crate::{Error, Result};

/// Aggregated target scores are clamped here before the log.
pub const SCORE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LossEval {
    /// Data term plus λ‖θ‖².
    pub loss: f64,
    /// Mean −ln(score of the true label).
    pub data_loss: f64,
    /// ∂loss/∂θ, present when requested.
    pub grad_theta: Option<Vec<f64>>,
    /// Rows whose true-label score hit the clamp.
    pub clamped: usize,
}

fn check_batch(plan: &ReprogramPlan, mapping: &LabelMapping, xs: &[&[f64]], ys: &[usize]) -> Result<()> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} inputs with {} labels", xs.len(), ys.len())));
    }
    if let Some(x) = xs.iter().find(|x| x.len() != plan.target_len()) {
        return Err(Error::Shape(format!(
            "target series has length {}, plan expects {}",
            x.len(),
            plan.target_len()
        )));
    }
    if let Some(&y) = ys.iter().find(|&&y| y >= mapping.target_classes()) {
        return Err(Error::Shape(format!("target label {y} outside the mapping")));
    }
    Ok(())
}

fn run(
    model: &SourceModel,
    plan: &ReprogramPlan,
    mapping: &LabelMapping,
    xs: &[&[f64]],
    ys: &[usize],
    drop: Option<&DropMask>,
    with_grad: bool,
) -> Result<LossEval> {
    check_model_plan(model, plan)?;
    check_batch(plan, mapping, xs, ys)?;
    if mapping.source_classes() != model.class_count() {
        return Err(Error::Config(format!(
            "mapping covers {} source classes, model has {}",
            mapping.source_classes(),
            model.class_count()
        )));
    }
    let d_s = plan.source_len();
    let mut pads = Vec::with_capacity(xs.len() * d_s);
    for x in xs {
        pads.extend(plan.pad(x)?);
    }
    let gate: Vec<f64> = match drop {
        Some(d) => plan.mask().iter().zip(d.values()).map(|(m, s)| m * s).collect(),
        None => plan.mask().to_vec(),
    };

    let mut g = if with_grad { Graph::new() } else { Graph::inference() };
    let params = model.arch().bind(&mut g, model.params());
    let pads = g.leaf(Tensor::new(vec![xs.len(), d_s], pads)?);
    let theta = g.leaf(Tensor::vector(plan.theta().to_vec()));
    let gate = g.leaf(Tensor::vector(gate));
    let delta = g.mul(theta, gate)?;
    let input = g.add_row(pads, delta)?;
    let logits = model.arch().forward(&mut g, &params, input)?;
    let probs = g.softmax(logits)?;
    let agg = g.leaf(mapping.aggregation_matrix());
    let scores = g.linear(probs, agg, None)?;
    let data = g.nll(scores, ys, SCORE_FLOOR)?;
    let sq = g.sum_squares(theta)?;
    let decay = g.scale(sq, plan.weight_decay())?;
    let total = g.add(data, decay)?;

    let grad_theta = if with_grad {
        let grads = g.backward(total)?;
        Some(grads.wrt(theta).into_data())
    } else {
        None
    };
    Ok(LossEval {
        loss: g.value(total).item(),
        data_loss: g.value(data).item(),
        grad_theta,
        clamped: g.clamped_count(),
    })
}

/// Mean −ln P(y_t | f_S(x_t + δ)) over the batch plus λ‖θ‖², eval mode.
pub fn v2s_loss(model: &SourceModel, plan: &ReprogramPlan, mapping: &LabelMapping, xs: &[&[f64]], ys: &[usize]) -> Result<f64> {
    Ok(run(model, plan, mapping, xs, ys, None, false)?.loss)
}

/// Loss and gradient w.r.t. θ; `drop` applies batch dropout multipliers to θ.
pub fn v2s_loss_and_grad(
    model: &SourceModel,
    plan: &ReprogramPlan,
    mapping: &LabelMapping,
    xs: &[&[f64]],
    ys: &[usize],
    drop: Option<&DropMask>,
) -> Result<LossEval> {
    run(model, plan, mapping, xs, ys, drop, true)
}
