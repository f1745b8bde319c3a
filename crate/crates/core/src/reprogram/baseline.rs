use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{EpochRecord, ReprogramPlan, TrainHistory};
use crate::dataio::Dataset;
use crate::nnet::{ops, AdamHyper, AdamState, Graph, ParamSet, Tensor};
use crate::seed::{derive_indexed, derive_seed, rng};
use crate::source_model::{argmax, stack_rows, SourceModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch: 32,
            epochs: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub history: TrainHistory,
    pub param_count: usize,
}

const SOURCE_PARAMS: usize = 9;

/// Fine-tunes a thawed copy of the source model plus a new dense head
/// mapping the K source logits to the c target classes. Target series are
/// zero-padded to the source length; the original model is left untouched.
pub fn finetune_baseline(
    model: &SourceModel,
    train: &Dataset,
    test: &Dataset,
    config: &BaselineConfig,
) -> Result<BaselineOutcome> {
    if config.batch == 0 || config.lr.is_nan() || config.lr <= 0.0 {
        return Err(Error::Config("baseline needs batch >= 1 and lr > 0".into()));
    }
    if train.length() != test.length() || train.class_count() != test.class_count() {
        return Err(Error::Config("train and test sets disagree in length or class count".into()));
    }
    let d_s = model.input_len();
    let pad = ReprogramPlan::from_parts(d_s, train.length(), 1, 0.0, 0.0, vec![0.0; d_s])?;
    let inputs = |ds: &Dataset| -> Result<Tensor> {
        let rows = ds.series().iter().map(|s| pad.pad(&s.values)).collect::<Result<Vec<_>>>()?;
        stack_rows(rows.iter().map(Vec::as_slice), d_s)
    };
    let x_train = inputs(train)?;
    let x_test = inputs(test)?;
    let y_train = train.labels();
    let y_test = test.labels();

    let arch = *model.arch();
    let k = model.class_count();
    let c = train.class_count();
    let mut params = model.params().thawed_copy();
    let head_rng = &mut rng(derive_seed(config.seed, "baseline-head"));
    params.push("transfer.weight", Tensor::randn(&[k, c], (1.0 / k as f64).sqrt(), head_rng))?;
    params.push("transfer.bias", Tensor::zeros(&[c]))?;

    let logits = |g: &mut Graph, params: &ParamSet, x: Tensor| -> Result<(Vec<crate::nnet::Var>, crate::nnet::Var)> {
        // Binds the source tensors followed by the head.
        let vars = arch.bind(g, params);
        let xv = g.leaf(x);
        let z = arch.forward(g, &vars[..SOURCE_PARAMS], xv)?;
        let out = g.linear(z, vars[SOURCE_PARAMS], Some(vars[SOURCE_PARAMS + 1]))?;
        Ok((vars, out))
    };
    let evaluate = |params: &ParamSet| -> Result<(f64, f64)> {
        let mut g = Graph::inference();
        let (_, out) = logits(&mut g, params, x_test.clone())?;
        let loss = g.cross_entropy(out, &y_test)?;
        let probs = ops::softmax(g.value(out))?;
        let correct = (0..y_test.len()).filter(|&i| argmax(probs.row(i)) == y_test[i]).count();
        Ok((g.value(loss).item(), correct as f64 / y_test.len() as f64))
    };

    let mut adam = AdamState::new(&params, AdamHyper::with_lr(config.lr));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng(derive_indexed(config.seed, "baseline-epoch", epoch as u64)));
        let mut total = 0.0;
        for chunk in order.chunks(config.batch) {
            let x = stack_rows(chunk.iter().map(|&i| x_train.row(i)), d_s)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            let mut g = Graph::new();
            let (vars, out) = logits(&mut g, &params, x)?;
            let loss = g.cross_entropy(out, &labels)?;
            total += g.value(loss).item() * chunk.len() as f64;
            let mut grads = g.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
            adam.step(&mut params, &grads)?;
        }
        let (val_loss, val_accuracy) = evaluate(&params)?;
        let train_loss = total / train.len() as f64;
        debug!("baseline epoch {}: train {train_loss:.5} test {val_loss:.5} acc {val_accuracy:.4}", epoch + 1);
        history.records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            val_accuracy,
            swd: None,
            clamped: 0,
        });
    }
    let (test_loss, test_accuracy) = evaluate(&params)?;
    Ok(BaselineOutcome {
        test_accuracy,
        test_loss,
        history,
        param_count: params.param_count(),
    })
}
