use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_model_plan, evaluate, placements, v2s_loss_and_grad, LabelMapping, ReprogramPlan};
use crate::alignment::{swd_per_epoch_hook, SwdTracker};
use crate::dataio::{split_kfold, Dataset};
use crate::nnet::{AdamHyper, AdamState, ParamSet, Tensor};
use crate::seed::{derive_indexed, derive_seed, rng};
use crate::source_model::SourceModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub dropout_grid: Vec<f64>,
    pub replica_grid: Vec<usize>,
    /// Cross-validation folds; below 2 disables selection.
    pub folds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            batch: 32,
            epochs: 100,
            weight_decay: 0.04,
            dropout_grid: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            replica_grid: (1..=10).collect(),
            folds: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.dropout_grid.is_empty() || self.replica_grid.is_empty() {
            return Err(Error::Config("dropout and replica grids must be non-empty".into()));
        }
        if let Some(p) = self.dropout_grid.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::Config(format!("dropout {p} outside [0, 1)")));
        }
        if self.replica_grid.contains(&0) {
            return Err(Error::Config("replica count must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub swd: Option<f64>,
    /// Training rows whose true-label score hit the log clamp this epoch.
    pub clamped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc,swd\n");
        for r in &self.records {
            let swd = r.swd.map(|s| format!("{s:?}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:?},{:?},{:?},{}", r.epoch, r.train_loss, r.val_loss, r.val_accuracy, swd);
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// One (m, p) grid cell and its cross-validated loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub replicas: usize,
    pub dropout: f64,
    pub mean_val_loss: Option<f64>,
    pub fold_losses: Vec<f64>,
    /// Fold whose model was kept, on the selected cell only.
    pub selected_fold: Option<usize>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ReprogramOutcome {
    pub plan: ReprogramPlan,
    pub history: TrainHistory,
    pub grid: Vec<GridCell>,
    pub source_checksum: String,
}

struct FitOutput {
    plan: ReprogramPlan,
    history: TrainHistory,
}

fn cell_tag(m: usize, p: f64) -> String {
    format!("m{m}/p{p:?}")
}

/// Trains θ on `train` for one (m, p) cell. When `monitor` is given every
/// epoch is evaluated on it (and optionally tracked by SWD).
#[allow(clippy::too_many_arguments)]
fn fit(
    model: &SourceModel,
    mapping: &LabelMapping,
    mut plan: ReprogramPlan,
    train: &Dataset,
    config: &TrainConfig,
    monitor: Option<&Dataset>,
    tracker: Option<&SwdTracker>,
    run_seed: u64,
) -> Result<FitOutput> {
    let mut theta = ParamSet::new();
    theta.push("theta", Tensor::vector(plan.theta().to_vec()))?;
    let mut adam = AdamState::new(&theta, AdamHyper::with_lr(config.lr));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng(derive_indexed(run_seed, "order", epoch as u64)));
        let mut drop_rng = rng(derive_indexed(run_seed, "dropout", epoch as u64));
        let mut total = 0.0;
        let mut clamped = 0;
        for chunk in order.chunks(config.batch) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| train.series()[i].values.as_slice()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train.series()[i].label).collect();
            let drop = plan.draw_dropout(&mut drop_rng);
            let eval = v2s_loss_and_grad(model, &plan, mapping, &xs, &ys, Some(&drop))?;
            if !eval.loss.is_finite() {
                return Err(Error::NonFinite("reprogramming loss"));
            }
            total += eval.loss * chunk.len() as f64;
            clamped += eval.clamped;
            let grad = Tensor::vector(eval.grad_theta.expect("gradient requested"));
            adam.step(&mut theta, &[grad])?;
            plan.set_theta(theta.tensor(0).data().to_vec())?;
        }
        let train_loss = total / train.len() as f64;
        if let Some(mon) = monitor {
            let ev = evaluate(model, &plan, mapping, mon)?;
            let swd = tracker.map(|t| swd_per_epoch_hook(t, model, &plan, mon)).transpose()?;
            debug!(
                "epoch {}: train {train_loss:.5} val {:.5} acc {:.4} swd {swd:?}",
                epoch + 1,
                ev.loss,
                ev.accuracy
            );
            history.records.push(EpochRecord {
                epoch: epoch + 1,
                train_loss,
                val_loss: ev.loss,
                val_accuracy: ev.accuracy,
                swd,
                clamped,
            });
        }
    }
    Ok(FitOutput { plan, history })
}

/// Learns θ for a frozen source model.
///
/// Infeasible replica counts are skipped. Every feasible (m, p) cell is
/// trained once per fold of a k-fold split of `train` and scored by its mean
/// validation loss (data term); ties go to smaller m, then smaller p. Within
/// the winning cell the fold model with the lowest validation loss is kept.
/// With `folds < 2` the first feasible cell is fit on all of `train` instead.
/// The kept run is evaluated on `monitor` (the training set when absent)
/// after every epoch.
pub fn train_reprogram(
    model: &SourceModel,
    mapping: &LabelMapping,
    train: &Dataset,
    monitor: Option<&Dataset>,
    tracker: Option<&SwdTracker>,
    config: &TrainConfig,
) -> Result<ReprogramOutcome> {
    config.validate()?;
    if !model.is_frozen() {
        return Err(Error::Config("reprogramming requires a frozen source model".into()));
    }
    if mapping.source_classes() != model.class_count() || mapping.target_classes() != train.class_count() {
        return Err(Error::Config(format!(
            "mapping is {}→{}, model has {} classes and the target task {}",
            mapping.source_classes(),
            mapping.target_classes(),
            model.class_count(),
            train.class_count()
        )));
    }
    let checksum = model.checksum();
    let d_s = model.input_len();
    let d_t = train.length();

    let mut replicas = config.replica_grid.clone();
    replicas.sort_unstable();
    replicas.dedup();
    let mut dropouts = config.dropout_grid.clone();
    dropouts.sort_by(f64::total_cmp);
    dropouts.dedup();

    let mut grid = Vec::new();
    let mut first_err = None;
    for &m in &replicas {
        let skipped = match placements(d_s, d_t, m) {
            Ok(_) => None,
            Err(e) => {
                info!("skipping m = {m}: {e}");
                let msg = e.to_string();
                first_err.get_or_insert(e);
                Some(msg)
            }
        };
        for &p in &dropouts {
            grid.push(GridCell {
                replicas: m,
                dropout: p,
                mean_val_loss: None,
                fold_losses: Vec::new(),
                selected_fold: None,
                skipped: skipped.clone(),
            });
        }
    }
    let feasible: Vec<usize> = (0..grid.len()).filter(|&i| grid[i].skipped.is_none()).collect();
    if feasible.is_empty() {
        return Err(first_err.expect("grid is non-empty"));
    }

    let init = |m: usize, p: f64, run: &str| {
        ReprogramPlan::build(
            d_s,
            d_t,
            m,
            p,
            config.weight_decay,
            derive_seed(config.seed, &format!("theta/{}/{run}", cell_tag(m, p))),
        )
    };
    let run_seed = |m: usize, p: f64, run: &str| derive_seed(config.seed, &format!("run/{}/{run}", cell_tag(m, p)));
    let monitor = Some(monitor.unwrap_or(train));

    let out = if config.folds < 2 {
        let (m, p) = (grid[feasible[0]].replicas, grid[feasible[0]].dropout);
        if feasible.len() > 1 {
            info!("no cross-validation requested; using m = {m}, p = {p}");
        }
        let plan = init(m, p, "full")?;
        check_model_plan(model, &plan)?;
        fit(model, mapping, plan, train, config, monitor, tracker, run_seed(m, p, "full"))?
    } else {
        let split = split_kfold(train.len(), config.folds, derive_seed(config.seed, "cv-folds"))?;
        // (cell index, mean loss, best fold, its loss)
        let mut best: Option<(usize, f64, usize, f64)> = None;
        for &i in &feasible {
            let (m, p) = (grid[i].replicas, grid[i].dropout);
            let mut losses = Vec::with_capacity(split.fold_count());
            for f in 0..split.fold_count() {
                let fold_train = train.subset(&split.training(f))?;
                let fold_val = train.subset(split.validation(f))?;
                let run = format!("fold{f}");
                let out = fit(model, mapping, init(m, p, &run)?, &fold_train, config, None, None, run_seed(m, p, &run))?;
                losses.push(evaluate(model, &out.plan, mapping, &fold_val)?.loss);
            }
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            let (fold, fold_loss) = losses
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (f, &l)| if l < acc.1 { (f, l) } else { acc });
            info!("cell m = {m}, p = {p}: mean validation loss {mean:.5}, best fold {fold} ({fold_loss:.5})");
            grid[i].mean_val_loss = Some(mean);
            grid[i].fold_losses = losses;
            // cells are visited in (m, p) order, so strict improvement keeps the tie-break
            if best.is_none_or(|b| mean < b.1) {
                best = Some((i, mean, fold, fold_loss));
            }
        }
        let (i, _, fold, _) = best.expect("at least one feasible cell");
        let (m, p) = (grid[i].replicas, grid[i].dropout);
        grid[i].selected_fold = Some(fold);
        info!("selected m = {m}, p = {p}, fold {fold}; replaying its fit with monitoring");
        // the replay follows the same seeds, so it reproduces the fold model exactly
        let run = format!("fold{fold}");
        let fold_train = train.subset(&split.training(fold))?;
        fit(model, mapping, init(m, p, &run)?, &fold_train, config, monitor, tracker, run_seed(m, p, &run))?
    };
    if model.checksum() != checksum {
        return Err(Error::Frozen);
    }
    Ok(ReprogramOutcome {
        plan: out.plan,
        history: out.history,
        grid,
        source_checksum: checksum,
    })
}
