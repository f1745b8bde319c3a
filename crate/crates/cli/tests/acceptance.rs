//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the report is
//! always printed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng as _;
use v2s_core::alignment::{
    lemma1_check, metrics, swd, theorem1_report, w1_1d, w1_exact_oracle, wp_1d, DatasetResult,
    EmpiricalDistribution, Estimator,
};
use v2s_core::nnet::{grad_check, ParamSet, Tensor};
use v2s_core::reprogram::{make_label_mapping, v2s_loss_and_grad, ReprogramPlan};
use v2s_core::seed::{derive_indexed, derive_seed, rng, Rng};
use v2s_core::source_model::{build_source_arch, TrainedSource, WidthConfig};
use v2s_core::toy::{toy_reprogram, toy_source, ToyConfig, ToyData, ToyReprogram};

/// Toy seed used for the single-run criteria.
const TOY_SEED: u64 = 0;
/// Seeds of the multi-run trend criterion.
const TREND_SEEDS: std::ops::Range<u64> = 100..110;

type Criterion = (u32, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

// ---------------------------------------------------------------------------

fn gradient_case(seed: u64) -> (f64, usize) {
    let mut r = rng(derive_indexed(seed, "acceptance-grad", 0));
    let mut model = build_source_arch(4, 64, WidthConfig::default(), r.random()).unwrap();
    model.freeze();
    let mapping = make_label_mapping(4, 2, r.random()).unwrap();
    let m = r.random_range(1..=3);
    let p = [0.0, 0.1, 0.2, 0.3, 0.4][r.random_range(0..5)];
    let plan = ReprogramPlan::build(64, 16, m, p, 0.04, r.random()).unwrap();
    let drop = plan.draw_dropout(&mut r);
    let n = r.random_range(2..=6);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| Tensor::randn(&[16], 1.0, &mut r).into_data()).collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let ys: Vec<usize> = (0..n).map(|_| r.random_range(0..2)).collect();

    let mut theta = ParamSet::new();
    theta.push("theta", Tensor::vector(plan.theta().to_vec())).unwrap();
    let loss = |params: &ParamSet| {
        let mut plan = plan.clone();
        plan.set_theta(params.tensor(0).data().to_vec())?;
        let e = v2s_loss_and_grad(&model, &plan, &mapping, &refs, &ys, Some(&drop))?;
        Ok((e.loss, vec![Tensor::vector(e.grad_theta.unwrap())]))
    };
    let rep = grad_check(loss, &theta, 1e-5, 1e-4, seed).unwrap();
    (rep.max_rel_error, rep.reprobed)
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let cases: Vec<(f64, usize)> = (0..20).map(gradient_case).collect();
    let worst = cases.iter().map(|c| c.0).fold(0.0, f64::max);
    let reprobed: usize = cases.iter().map(|c| c.1).sum();
    let elapsed = t.elapsed();
    verdict(
        worst <= 1e-4 && within(elapsed, 30),
        format!(
            "20 configs, worst relative error {worst:.2e} (<= 1e-4), {reprobed} coordinates re-probed at a smaller step, {elapsed:.1?} (< 30s)"
        ),
    )
}

// ---------------------------------------------------------------------------

/// Minimum mean cost over every permutation coupling of two equal-size
/// uniform measures.
fn brute_force_w1(a: &[f64], b: &[f64]) -> f64 {
    fn go(a: &[f64], b: &[f64], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
        if i == a.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                go(a, b, used, i + 1, acc + (a[i] - b[j]).abs(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
    best / a.len() as f64
}

fn draws(r: &mut Rng, n: usize) -> Vec<f64> {
    let scale = r.random_range(0.1..10.0);
    let shift = r.random_range(-5.0..5.0);
    (0..n).map(|_| shift + scale * (r.random::<f64>() - 0.5)).collect()
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let mut worst_brute = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for case in 0..100 {
        let mut r = rng(derive_indexed(2, "brute", case));
        let n = r.random_range(1..=6);
        let (a, b) = (draws(&mut r, n), draws(&mut r, n));
        worst_brute = worst_brute.max((w1_1d(&a, &b).unwrap() - brute_force_w1(&a, &b)).abs());

        let mut r = rng(derive_indexed(2, "oracle", case));
        let n = r.random_range(1..=64);
        let (a, b) = (draws(&mut r, n), draws(&mut r, n));
        let col = |v: &[f64]| EmpiricalDistribution::new(Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()).unwrap();
        let oracle = w1_exact_oracle(&col(&a), &col(&b)).unwrap();
        worst_oracle = worst_oracle.max((w1_1d(&a, &b).unwrap() - oracle).abs());
    }
    let elapsed = t.elapsed();
    verdict(
        worst_brute <= 1e-12 && worst_oracle <= 1e-9 && within(elapsed, 30),
        format!(
            "brute force (n <= 6) max diff {worst_brute:.1e} (<= 1e-12), assignment (n <= 64) max diff {worst_oracle:.1e} (<= 1e-9), {elapsed:.1?}"
        ),
    )
}

// ---------------------------------------------------------------------------

fn criterion_3() -> Verdict {
    let t = Instant::now();
    let mut violations = 0;
    for case in 0..1000 {
        let mut r = rng(derive_indexed(3, "order", case));
        let n = r.random_range(1..=64);
        let (a, b) = (draws(&mut r, n), draws(&mut r, n));
        if wp_1d(&a, &b, 1.0).unwrap() > wp_1d(&a, &b, 2.0).unwrap() {
            violations += 1;
        }
    }
    let cloud = |seed| EmpiricalDistribution::new(Tensor::randn(&[64, 8], 1.0, &mut rng(seed))).unwrap();
    let (a, b) = (cloud(31), cloud(32));
    let self_distance = swd(&a, &a, 1000, 2.0, 9).unwrap().value;
    let first = swd(&a, &b, 1000, 2.0, 9).unwrap().value;
    let replay = swd(&a, &b, 1000, 2.0, 9).unwrap().value;
    let elapsed = t.elapsed();
    verdict(
        violations == 0 && self_distance == 0.0 && first.to_bits() == replay.to_bits() && within(elapsed, 30),
        format!(
            "W1 > W2 in {violations}/1000 pairs, swd(A,A) = {self_distance:e}, replay bitwise equal: {}, {elapsed:.1?}",
            first.to_bits() == replay.to_bits()
        ),
    )
}

// ---------------------------------------------------------------------------

fn criterion_4() -> Verdict {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut tightest = f64::INFINITY;
    for trial in 0..50u64 {
        let mut r = rng(derive_indexed(4, "lemma", trial));
        let k = [2, 4, 8][(trial % 3) as usize];
        let width = WidthConfig::scaled(r.random_range(1..=2));
        let mut model = build_source_arch(k, 64, width, r.random()).unwrap();
        model.freeze();
        let x = Tensor::randn(&[64, 64], r.random_range(0.5..2.0), &mut r);
        let shift = r.random_range(-1.0..1.0);
        let mut x_prime = Tensor::randn(&[64, 64], r.random_range(0.5..2.0), &mut r);
        for v in x_prime.data_mut() {
            *v += shift;
        }
        let rep = lemma1_check(&model, &x, &x_prime, 0.05).unwrap();
        tightest = tightest.min(rep.rhs + rep.slack - rep.lhs);
        if !rep.holds {
            failures.push(trial);
        }
    }
    let elapsed = t.elapsed();
    verdict(
        failures.is_empty() && within(elapsed, 120),
        format!(
            "50 trials (K in {{2,4,8}}, n=64), failures {failures:?}, smallest margin {tightest:.3e}, {elapsed:.1?} (< 2 min)"
        ),
    )
}

// ---------------------------------------------------------------------------

struct ToyRun {
    config: ToyConfig,
    data: ToyData,
    source: TrainedSource,
    source_time: Duration,
    reprogram: ToyReprogram,
    reprogram_time: Duration,
    checksum_before: String,
    checksum_after: String,
    file_unchanged: bool,
}

fn run_toy(seed: u64) -> ToyRun {
    let config = ToyConfig::new(seed);
    let data = ToyData::generate(&config).unwrap();
    let t = Instant::now();
    let source = toy_source(&config, &data).unwrap();
    let source_time = t.elapsed();
    let checksum_before = source.model.checksum();
    let bytes_before = source.model.to_bytes().unwrap();
    let t = Instant::now();
    let reprogram = toy_reprogram(&config, &data, &source).unwrap();
    let reprogram_time = t.elapsed();
    let checksum_after = source.model.checksum();
    let file_unchanged = source.model.to_bytes().unwrap() == bytes_before;
    ToyRun {
        config,
        data,
        source,
        source_time,
        reprogram,
        reprogram_time,
        checksum_before,
        checksum_after,
        file_unchanged,
    }
}

fn toy() -> &'static ToyRun {
    static RUN: OnceLock<ToyRun> = OnceLock::new();
    RUN.get_or_init(|| run_toy(TOY_SEED))
}

fn criterion_5() -> Verdict {
    let run = toy();
    let t = Instant::now();
    let report = theorem1_report(
        &run.source.risk,
        &run.source.model,
        &run.reprogram.outcome.plan,
        &run.reprogram.mapping,
        &run.data.source,
        &run.data.target_test,
        Estimator::Exact,
        64,
        0.05,
        derive_seed(TOY_SEED, "bound"),
    )
    .unwrap();
    let elapsed = t.elapsed();
    verdict(
        report.satisfied && report.estimator == "exact-oracle" && report.n_points == 64 && within(elapsed, 60),
        format!(
            "risk {:.4} <= eps_S {:.4} + 2*sqrt({})*W1 {:.4} = {:.4} (+0.05), one-to-one mismatch flag: {}, {elapsed:.1?} (< 1 min)",
            report.measured_target_risk, report.epsilon_s, report.k, report.w1, report.bound, report.assumption2_mismatch
        ),
    )
}

fn criterion_6() -> Verdict {
    let run = toy();
    let c = &run.config;
    let shape_ok = run.data.source.len() == 1600
        && run.data.source.length() == 512
        && run.data.source.class_count() == 8
        && run.data.target_train.len() == 60
        && run.data.target_train.length() == 64
        && run.data.target_train.class_count() == 2;
    let hyper_ok = c.train.lr == 0.05 && c.train.batch == 32 && c.train.epochs == 100 && c.train.weight_decay == 0.04;
    let acc_source = run.source.heldout_accuracy;
    let acc_target = run.reprogram.test_accuracy;
    let plan = &run.reprogram.outcome.plan;
    let unchanged = run.file_unchanged
        && run.checksum_before == run.checksum_after
        && run.reprogram.outcome.source_checksum == run.checksum_before;
    verdict(
        shape_ok
            && hyper_ok
            && acc_source >= 0.95
            && within(run.source_time, 120)
            && acc_target >= 0.90
            && within(run.reprogram_time, 60)
            && unchanged,
        format!(
            "source held-out acc {acc_source:.4} (>= 0.95) in {:.1?} (< 2 min); target test acc {acc_target:.4} (>= 0.90, m={} p={}) in {:.1?} (< 1 min); checksum unchanged: {unchanged}",
            run.source_time,
            plan.replicas(),
            plan.dropout(),
            run.reprogram_time
        ),
    )
}

fn criterion_7() -> Verdict {
    let t = Instant::now();
    let (mut swd_down, mut loss_down) = (0, 0);
    let mut lines = String::new();
    for seed in TREND_SEEDS {
        let run = run_toy(seed);
        let records = &run.reprogram.outcome.history.records;
        let (first, last) = (records.first().unwrap(), records.last().unwrap());
        let (s0, s1) = (first.swd.unwrap(), last.swd.unwrap());
        swd_down += usize::from(s1 < s0);
        loss_down += usize::from(last.val_loss < first.val_loss);
        write!(
            lines,
            "\n    seed {seed}: swd {s0:.4} -> {s1:.4}, val loss {:.4} -> {:.4}, test acc {:.3}",
            first.val_loss, last.val_loss, run.reprogram.test_accuracy
        )
        .unwrap();
    }
    let elapsed = t.elapsed();
    verdict(
        swd_down >= 8 && loss_down >= 8,
        format!(
            "SWD fell in {swd_down}/10 runs (>= 8), val loss fell in {loss_down}/10 runs (>= 8), {elapsed:.1?}{lines}"
        ),
    )
}

// ---------------------------------------------------------------------------

fn criterion_8() -> Verdict {
    let mut bad = Vec::new();
    for seed in 0..100 {
        let m = make_label_mapping(35, 6, seed).unwrap();
        let mut seen = [false; 35];
        let mut ok = m.sets().len() == 6;
        for set in m.sets() {
            ok &= set.len() == 5;
            for &s in set {
                ok &= s < 35 && !seen[s];
                seen[s] = true;
            }
        }
        let unassigned: Vec<usize> = (0..35).filter(|&s| !seen[s]).collect();
        ok &= unassigned.len() == 5 && unassigned == m.unassigned();
        if !ok {
            bad.push(seed);
        }
    }
    verdict(
        bad.is_empty(),
        format!("100 seeds, six disjoint sets of 5 with 5 unassigned; bad seeds {bad:?}"),
    )
}

fn criterion_9() -> Verdict {
    let hand = metrics(&[DatasetResult {
        name: "hand".into(),
        accuracy: 0.87,
        class_count: 2,
    }])
    .unwrap();
    let perfect = metrics(&[
        DatasetResult {
            name: "a".into(),
            accuracy: 1.0,
            class_count: 2,
        },
        DatasetResult {
            name: "b".into(),
            accuracy: 1.0,
            class_count: 5,
        },
    ])
    .unwrap();
    let pass = hand.pce == [6.5] && hand.mpce == 6.5 && perfect.pce == [0.0, 0.0] && perfect.mpce == 0.0;
    verdict(
        pass,
        format!(
            "acc 0.87, c=2 -> PCE {:?}, MPCE {}; all correct -> PCE {:?}, MPCE {}",
            hand.pce, hand.mpce, perfect.pce, perfect.mpce
        ),
    )
}

// ---------------------------------------------------------------------------

fn v2s(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_v2s"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Every subcommand in sequence, small sizes.
fn cli_session(dir: &Path) -> Result<(), String> {
    let steps: &[&[&str]] = &[
        &["gen-data", "--kind", "source", "--classes", "4", "--len", "128", "--n", "20", "--test-n", "5", "--name", "src"],
        &["gen-data", "--kind", "bumps", "--classes", "2", "--len", "32", "--n", "10", "--test-n", "10", "--name", "tgt"],
        &["train-source", "--data", "src_TRAIN.tsv", "--epochs", "3"],
        &["train-source", "--data", "src_TRAIN.tsv", "--epochs", "3", "--width", "2", "--out", "wide"],
        &[
            "reprogram", "--model", "source.v2sm", "--train", "tgt_TRAIN.tsv", "--test", "tgt_TEST.tsv", "--source-data",
            "src_TRAIN.tsv", "--epochs", "4", "--m-grid", "1-3", "--dropout-grid", "0,0.2", "--folds", "3",
        ],
        &[
            "reprogram", "--model", "wide/source.v2sm", "--train", "tgt_TRAIN.tsv", "--epochs", "4", "--m-grid", "2",
            "--dropout-grid", "0.1", "--folds", "1", "--out", "wide",
        ],
        &[
            "baseline", "--model", "source.v2sm", "--train", "tgt_TRAIN.tsv", "--test", "tgt_TEST.tsv", "--epochs", "3",
        ],
        &[
            "diagnose", "--model", "source.v2sm", "--theta", "theta.v2st", "--model", "wide/source.v2sm", "--theta",
            "wide/theta.v2st", "--source-data", "src_TRAIN.tsv", "--target-data", "tgt_TEST.tsv", "--history",
            "history.csv", "--risk", "source_risk.json",
        ],
        &[
            "diagnose", "--model", "source.v2sm", "--theta", "theta.v2st", "--source-data", "src_TRAIN.tsv",
            "--target-data", "tgt_TEST.tsv", "--estimator", "swd", "--projections", "200", "--out", "swd",
        ],
        &["dump-logits", "--model", "source.v2sm", "--data", "tgt_TEST.tsv", "--theta", "theta.v2st"],
        &["dump-logits", "--model", "source.v2sm", "--data", "src_TEST.tsv", "--out", "plain"],
    ];
    for args in steps {
        v2s(dir, args)?;
    }
    Ok(())
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn criterion_10() -> Verdict {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("first"), tmp.path().join("second"));
    for dir in [&a, &b] {
        fs::create_dir_all(dir).unwrap();
        if let Err(e) = cli_session(dir) {
            return verdict(false, e);
        }
    }
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    let differing: Vec<&String> = sa.keys().filter(|k| sa.get(*k) != sb.get(*k)).collect();
    let expected = [
        "src_TRAIN.tsv",
        "source.v2sm",
        "source_risk.json",
        "theta.v2st",
        "history.csv",
        "metrics.json",
        "baseline_metrics.json",
        "baseline_history.csv",
        "bound.json",
        "swd_trace.csv",
        "model_selection.json",
        "logits_before.csv",
        "logits_after.csv",
        "plain/logits.csv",
        "swd/bound.json",
    ];
    let missing: Vec<&str> = expected.iter().copied().filter(|f| !sa.contains_key(*f)).collect();
    let elapsed = t.elapsed();
    verdict(
        differing.is_empty() && sa.len() == sb.len() && missing.is_empty(),
        format!(
            "{} output files across 6 subcommands, differing {differing:?}, missing {missing:?}, {elapsed:.1?}",
            sa.len()
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient fidelity", criterion_1),
        (2, "OT oracle equivalence", criterion_2),
        (3, "estimator ordering", criterion_3),
        (4, "logit alignment inequality", criterion_4),
        (6, "pipeline reproduction", criterion_6),
        (5, "risk bound end-to-end", criterion_5),
        (7, "SWD and loss trend", criterion_7),
        (8, "mapping arithmetic", criterion_8),
        (9, "metrics arithmetic", criterion_9),
        (10, "CLI determinism", criterion_10),
    ];
    let mut results = BTreeMap::new();
    for (n, name, run) in criteria {
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} ({name}): {status}: {}", v.detail);
        results.insert(n, v.pass);
    }
    let failed: Vec<u32> = results.iter().filter(|(_, p)| !**p).map(|(n, _)| *n).collect();
    println!("acceptance: {}/10 criteria passed", 10 - failed.len());
    if !failed.is_empty() {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
