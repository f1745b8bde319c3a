use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use v2s_core::alignment::{metrics, theorem1_report, DatasetResult, Estimator, MetricsReport, SwdTracker};
use v2s_core::dataio::{load_ucr, normalize, synth_source, synth_target, write_ucr, Dataset, NormPolicy, SynthSpec, WaveKind};
use v2s_core::nnet::Tensor;
use v2s_core::reprogram::{
    evaluate, finetune_baseline, load_checkpoint, make_label_mapping, reprogrammed_logits, save_checkpoint,
    train_reprogram, BaselineConfig, GridCell, ReprogramPlan, ThetaCheckpoint, TrainConfig,
};
use v2s_core::seed::derive_seed;
use v2s_core::source_model::{
    build_source_arch, source_risk, stack_rows, train_source, SourceHyper, SourceModel, SourceRiskEstimate,
    WidthConfig,
};
use v2s_core::{Error, Result};

use crate::args::{self, Cli, Command, DataOpts, EstimatorArg};

pub fn run(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let ctx = Ctx {
        out: &cli.out,
        seed: cli.seed,
    };
    match &cli.command {
        Command::GenData(a) => gen_data(&ctx, a),
        Command::TrainSource(a) => cmd_train_source(&ctx, a),
        Command::Reprogram(a) => reprogram(&ctx, a),
        Command::Baseline(a) => baseline(&ctx, a),
        Command::Diagnose(a) => diagnose(&ctx, a),
        Command::DumpLogits(a) => dump_logits(&ctx, a),
    }
}

/// Maps an error onto the process exit code: 1 validation, 2 runtime, 3 I/O.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 3,
        Error::Argument(_)
        | Error::Config(_)
        | Error::Format { .. }
        | Error::Parse { .. }
        | Error::EmptyDataset
        | Error::Placement { .. }
        | Error::Mapping(_) => 1,
        _ => 2,
    }
}

struct Ctx<'a> {
    out: &'a Path,
    seed: u64,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        info!("wrote {}", path.display());
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
        text.push('\n');
        self.write_text(name, &text)
    }
}

fn load(path: &Path, io: &DataOpts) -> Result<Dataset> {
    let policy: NormPolicy = io.norm.parse()?;
    Ok(normalize(&load_ucr(path, io.delimiter)?, policy))
}

fn load_frozen(path: &Path) -> Result<SourceModel> {
    let model = SourceModel::load(path)?;
    if !model.is_frozen() {
        return Err(Error::Config(format!("{} is not a frozen source model", path.display())));
    }
    Ok(model)
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn gen_data(ctx: &Ctx, a: &args::GenData) -> Result<()> {
    let kind: WaveKind = a.kind.parse()?;
    let name = a.name.clone().unwrap_or_else(|| a.kind.clone());
    let make = |samples_per_class, seed| {
        let spec = SynthSpec {
            kind,
            class_count: a.classes,
            length: a.len,
            samples_per_class,
            noise_std: a.noise,
            seed,
        };
        if kind == WaveKind::Sinusoid {
            synth_source(&spec)
        } else {
            synth_target(&spec)
        }
    };
    let train = make(a.n, ctx.seed)?;
    let path = ctx.path(&format!("{name}_TRAIN.tsv"));
    write_ucr(&train, &path, '\t')?;
    info!("wrote {} ({} series)", path.display(), train.len());
    if let Some(n) = a.test_n {
        let test = make(n, derive_seed(ctx.seed, "test"))?;
        let path = ctx.path(&format!("{name}_TEST.tsv"));
        write_ucr(&test, &path, '\t')?;
        info!("wrote {} ({} series)", path.display(), test.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct SourceRiskFile {
    epsilon_s: f64,
    n_eval: usize,
    dataset: String,
    heldout_accuracy: f64,
    final_train_loss: Option<f64>,
    param_count: usize,
    checksum: String,
}

fn cmd_train_source(ctx: &Ctx, a: &args::TrainSource) -> Result<()> {
    let data = load(&a.data, &a.io)?;
    let model = build_source_arch(
        data.class_count(),
        data.length(),
        WidthConfig::scaled(a.width),
        derive_seed(ctx.seed, "source-init"),
    )?;
    let hyper = SourceHyper {
        lr: a.lr,
        batch: a.batch,
        epochs: a.epochs,
        seed: derive_seed(ctx.seed, "source-train"),
        holdout: a.holdout,
    };
    let trained = train_source(&model, &data, &hyper)?;
    let path = ctx.path("source.v2sm");
    trained.model.save(&path)?;
    info!("held-out accuracy {:.4}, epsilon_s {:.4}", trained.heldout_accuracy, trained.risk.epsilon_s);
    ctx.write_json(
        "source_risk.json",
        &SourceRiskFile {
            epsilon_s: trained.risk.epsilon_s,
            n_eval: trained.risk.n_eval,
            dataset: trained.risk.dataset.clone(),
            heldout_accuracy: trained.heldout_accuracy,
            final_train_loss: trained.train_loss.last().copied(),
            param_count: trained.model.param_count(),
            checksum: trained.model.checksum(),
        },
    )
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Argument(format!("bad number {t:?} in grid {s:?}")))
        })
        .collect()
}

/// Comma-separated counts where `a-b` expands to the inclusive range.
fn parse_usize_grid(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Argument(format!("bad replica grid {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo.trim().parse().map_err(|_| bad())?;
                let hi: usize = hi.trim().parse().map_err(|_| bad())?;
                if lo > hi {
                    return Err(bad());
                }
                out.extend(lo..=hi);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct ReprogramMetrics<'a> {
    dataset: String,
    evaluated_on: &'static str,
    accuracy: f64,
    loss: f64,
    train_accuracy: f64,
    replicas: usize,
    dropout: f64,
    weight_decay: f64,
    mapping: &'a [Vec<usize>],
    grid: &'a [GridCell],
    source_checksum_before: String,
    source_checksum_after: String,
    report: MetricsReport,
}

fn reprogram(ctx: &Ctx, a: &args::Reprogram) -> Result<()> {
    let model = load_frozen(&a.model)?;
    let before = model.checksum();
    let train = load(&a.train, &a.io)?;
    let test = a.test.as_deref().map(|p| load(p, &a.io)).transpose()?;
    let mapping = make_label_mapping(model.class_count(), train.class_count(), derive_seed(ctx.seed, "mapping"))?;
    let tracker = match &a.source_data {
        Some(p) => Some(SwdTracker::new(
            &model,
            &load(p, &a.io)?,
            a.swd_points,
            a.swd_projections,
            derive_seed(ctx.seed, "swd"),
        )?),
        None => None,
    };
    let config = TrainConfig {
        lr: a.lr,
        batch: a.batch,
        epochs: a.epochs,
        weight_decay: a.weight_decay,
        dropout_grid: parse_f64_list(&a.dropout_grid)?,
        replica_grid: parse_usize_grid(&a.m_grid)?,
        folds: a.folds,
        seed: derive_seed(ctx.seed, "reprogram"),
    };
    let outcome = train_reprogram(&model, &mapping, &train, test.as_ref(), tracker.as_ref(), &config)?;
    let (eval_set, evaluated_on) = match &test {
        Some(t) => (t, "test"),
        None => (&train, "train"),
    };
    let ev = evaluate(&model, &outcome.plan, &mapping, eval_set)?;
    let train_ev = evaluate(&model, &outcome.plan, &mapping, &train)?;
    info!(
        "m={} p={} {evaluated_on} accuracy {:.4}",
        outcome.plan.replicas(),
        outcome.plan.dropout(),
        ev.accuracy
    );

    save_checkpoint(
        &ThetaCheckpoint {
            plan: outcome.plan.clone(),
            mapping: mapping.clone(),
            source_checksum: outcome.source_checksum.clone(),
        },
        ctx.path("theta.v2st"),
    )?;
    ctx.write_text("history.csv", &outcome.history.to_csv())?;
    let report = metrics(&[DatasetResult {
        name: eval_set.name().to_string(),
        accuracy: ev.accuracy,
        class_count: eval_set.class_count(),
    }])?;
    ctx.write_json(
        "metrics.json",
        &ReprogramMetrics {
            dataset: eval_set.name().to_string(),
            evaluated_on,
            accuracy: ev.accuracy,
            loss: ev.loss,
            train_accuracy: train_ev.accuracy,
            replicas: outcome.plan.replicas(),
            dropout: outcome.plan.dropout(),
            weight_decay: outcome.plan.weight_decay(),
            mapping: mapping.sets(),
            grid: &outcome.grid,
            source_checksum_before: before,
            source_checksum_after: model.checksum(),
            report,
        },
    )
}

#[derive(Serialize)]
struct BaselineMetrics {
    dataset: String,
    method: &'static str,
    test_accuracy: f64,
    test_loss: f64,
    param_count: usize,
    report: MetricsReport,
}

fn baseline(ctx: &Ctx, a: &args::Baseline) -> Result<()> {
    let model = SourceModel::load(&a.model)?;
    let train = load(&a.train, &a.io)?;
    let test = load(&a.test, &a.io)?;
    let outcome = finetune_baseline(
        &model,
        &train,
        &test,
        &BaselineConfig {
            lr: a.lr,
            batch: a.batch,
            epochs: a.epochs,
            seed: derive_seed(ctx.seed, "baseline"),
        },
    )?;
    info!("fine-tuned test accuracy {:.4}", outcome.test_accuracy);
    ctx.write_text("baseline_history.csv", &outcome.history.to_csv())?;
    let report = metrics(&[DatasetResult {
        name: test.name().to_string(),
        accuracy: outcome.test_accuracy,
        class_count: test.class_count(),
    }])?;
    ctx.write_json(
        "baseline_metrics.json",
        &BaselineMetrics {
            dataset: test.name().to_string(),
            method: "finetune",
            test_accuracy: outcome.test_accuracy,
            test_loss: outcome.test_loss,
            param_count: outcome.param_count,
            report,
        },
    )
}

#[derive(Serialize)]
struct SelectionRow {
    model: String,
    theta: String,
    epsilon_s: f64,
    swd: f64,
    w1: f64,
    /// ε_S + SWD; lower is the better candidate.
    score: f64,
    satisfied: bool,
}

/// SWD column of a history.csv, skipping epochs without a measurement.
fn history_swd(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("epoch,train_loss,val_loss,val_acc,swd") {
        return Err(Error::Format {
            line: 1,
            msg: "expected a history.csv header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |t: &str| -> Result<f64> {
            t.parse().map_err(|_| Error::Parse {
                line: i + 2,
                token: t.to_string(),
            })
        };
        if fields.len() != 5 {
            return Err(Error::Format {
                line: i + 2,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        if !fields[4].is_empty() {
            out.push((parse(fields[0])? as usize, parse(fields[4])?));
        }
    }
    Ok(out)
}

fn diagnose(ctx: &Ctx, a: &args::Diagnose) -> Result<()> {
    if a.model.len() != a.theta.len() {
        return Err(Error::Argument(format!(
            "{} --model but {} --theta given",
            a.model.len(),
            a.theta.len()
        )));
    }
    let source = load(&a.source_data, &a.io)?;
    let target = load(&a.target_data, &a.io)?;
    let estimator = match a.estimator {
        EstimatorArg::Exact => Estimator::Exact,
        EstimatorArg::Swd => Estimator::Swd {
            n_projections: a.projections,
            seed: derive_seed(ctx.seed, "estimator"),
        },
    };
    let mut rows = Vec::with_capacity(a.model.len());
    for (i, (model_path, theta_path)) in a.model.iter().zip(&a.theta).enumerate() {
        let model = SourceModel::load(model_path)?;
        let ckpt = load_checkpoint(theta_path)?;
        ckpt.matches(&model);
        let epsilon = match (&a.risk, i) {
            (Some(p), 0) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str::<SourceRiskEstimate>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            _ => source_risk(&model, &source)?,
        };
        let report = theorem1_report(
            &epsilon,
            &model,
            &ckpt.plan,
            &ckpt.mapping,
            &source,
            &target,
            estimator,
            a.n,
            a.slack,
            derive_seed(ctx.seed, "bound"),
        )?;
        if !report.satisfied {
            warn!("bound not satisfied for {}", model_path.display());
        }
        let tracker = SwdTracker::new(&model, &source, a.n, a.projections, derive_seed(ctx.seed, "swd"))?;
        let swd = tracker.measure(&reprogrammed_logits(&model, &ckpt.plan, &target)?)?;
        if i == 0 {
            ctx.write_json("bound.json", &report)?;
            let mut trace = String::from("stage,swd\n");
            let initial = tracker.measure(&reprogrammed_logits(&model, &ckpt.plan.zeroed(), &target)?)?;
            writeln!(trace, "initial,{initial:?}").unwrap();
            if let Some(h) = &a.history {
                for (epoch, v) in history_swd(h)? {
                    writeln!(trace, "epoch{epoch},{v:?}").unwrap();
                }
            }
            writeln!(trace, "final,{swd:?}").unwrap();
            ctx.write_text("swd_trace.csv", &trace)?;
        }
        rows.push(SelectionRow {
            model: display(model_path),
            theta: display(theta_path),
            epsilon_s: epsilon.epsilon_s,
            swd,
            w1: report.w1,
            score: epsilon.epsilon_s + swd,
            satisfied: report.satisfied,
        });
    }
    if rows.len() > 1 {
        ctx.write_json("model_selection.json", &rows)?;
    }
    Ok(())
}

fn logits_csv(logits: &Tensor, labels: &[usize]) -> String {
    let k = logits.shape()[1];
    let mut s = String::from("label");
    for j in 0..k {
        write!(s, ",z{j}").unwrap();
    }
    s.push('\n');
    for (row, label) in logits.data().chunks(k).zip(labels) {
        write!(s, "{label}").unwrap();
        for v in row {
            write!(s, ",{v:?}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn dump_logits(ctx: &Ctx, a: &args::DumpLogits) -> Result<()> {
    let model = SourceModel::load(&a.model)?;
    let data = load(&a.data, &a.io)?;
    let labels = data.labels();
    match &a.theta {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            ckpt.matches(&model);
            let before = reprogrammed_logits(&model, &ckpt.plan.zeroed(), &data)?;
            let after = reprogrammed_logits(&model, &ckpt.plan, &data)?;
            ctx.write_text("logits_before.csv", &logits_csv(&before, &labels))?;
            ctx.write_text("logits_after.csv", &logits_csv(&after, &labels))
        }
        None => {
            let logits = if data.length() == model.input_len() {
                let x = stack_rows(data.series().iter().map(|s| s.values.as_slice()), model.input_len())?;
                model.logits(&x)?
            } else {
                // Shorter series are zero-padded into the first slot.
                let plan = ReprogramPlan::build(model.input_len(), data.length(), 1, 0.0, 0.0, 0)?.zeroed();
                reprogrammed_logits(&model, &plan, &data)?
            };
            ctx.write_text("logits.csv", &logits_csv(&logits, &labels))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_usize_grid("1-3,5").unwrap(), vec![1, 2, 3, 5]);
        assert_eq!(parse_f64_list("0, 0.25").unwrap(), vec![0.0, 0.25]);
        assert!(parse_usize_grid("3-1").is_err());
        assert!(parse_f64_list("x").is_err());
    }

    #[test]
    fn exit_code_classes() {
        assert_eq!(exit_code(&Error::Argument("x".into())), 1);
        assert_eq!(exit_code(&Error::OracleSize { n: 1024, max: 256 }), 2);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), 3);
    }
}
