//! Reprogramming a frozen source model: the additive input transform, the
//! many-to-one label mapping, the training loss and loop, prediction, the
//! fine-tuning baseline and θ checkpoints.

mod baseline;
mod checkpoint;
mod loss;
mod mapping;
mod plan;
mod train;

pub use baseline::{finetune_baseline, BaselineConfig, BaselineOutcome};
pub use checkpoint::{load_checkpoint, save_checkpoint, ThetaCheckpoint, THETA_MAGIC};
pub use loss::{v2s_loss, v2s_loss_and_grad, LossEval, SCORE_FLOOR};
pub use mapping::{make_label_mapping, target_scores, LabelMapping};
pub use plan::{placements, DropMask, ReprogramPlan, THETA_INIT_STD};
pub use train::{train_reprogram, EpochRecord, GridCell, ReprogramOutcome, TrainConfig, TrainHistory};

use crate::dataio::Dataset;
use crate::nnet::{ops, Tensor};
use crate::source_model::{argmax, SourceModel};
use crate::{Error, Result};

/// Reprogrammed inputs `[n, d_S]` for every series of `dataset` (eval mode).
pub fn reprogrammed_inputs(plan: &ReprogramPlan, dataset: &Dataset) -> Result<Tensor> {
    if dataset.length() != plan.target_len() {
        return Err(Error::Shape(format!(
            "dataset length {} does not match plan target length {}",
            dataset.length(),
            plan.target_len()
        )));
    }
    let mut data = Vec::with_capacity(dataset.len() * plan.source_len());
    for s in dataset.series() {
        data.extend(plan.transform(&s.values, None)?);
    }
    Tensor::new(vec![dataset.len(), plan.source_len()], data)
}

/// Source logits z_S(x_t + δ) for every target series.
pub fn reprogrammed_logits(model: &SourceModel, plan: &ReprogramPlan, dataset: &Dataset) -> Result<Tensor> {
    check_model_plan(model, plan)?;
    model.logits(&reprogrammed_inputs(plan, dataset)?)
}

pub(crate) fn check_model_plan(model: &SourceModel, plan: &ReprogramPlan) -> Result<()> {
    if model.input_len() != plan.source_len() {
        return Err(Error::Config(format!(
            "plan produces length {} inputs, model expects {}",
            plan.source_len(),
            model.input_len()
        )));
    }
    Ok(())
}

/// Target label (argmax of the aggregated scores, lowest index on ties)
/// and the scores themselves.
pub fn predict(model: &SourceModel, plan: &ReprogramPlan, mapping: &LabelMapping, x: &[f64]) -> Result<(usize, Vec<f64>)> {
    check_model_plan(model, plan)?;
    let input = Tensor::new(vec![1, plan.source_len()], plan.transform(x, None)?)?;
    let probs = model.probs(&input)?;
    let scores = target_scores(probs.row(0), mapping);
    Ok((argmax(&scores), scores))
}

/// Eval-mode loss (data term only) and accuracy over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

pub fn evaluate(model: &SourceModel, plan: &ReprogramPlan, mapping: &LabelMapping, dataset: &Dataset) -> Result<Evaluation> {
    let z = reprogrammed_logits(model, plan, dataset)?;
    let probs = ops::softmax(&z)?;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut predictions = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.series().iter().enumerate() {
        let scores = target_scores(probs.row(i), mapping);
        loss -= scores[s.label].max(SCORE_FLOOR).ln();
        let pred = argmax(&scores);
        correct += usize::from(pred == s.label);
        predictions.push(pred);
    }
    let n = dataset.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        predictions,
    })
}
