//! End-to-end behaviour of the seeded toy pipeline, the fine-tuning
//! baseline and the on-disk containers.

use std::sync::OnceLock;

use v2s_core::reprogram::{
    evaluate, finetune_baseline, load_checkpoint, make_label_mapping, save_checkpoint, train_reprogram,
    BaselineConfig, ThetaCheckpoint, TrainConfig,
};
use v2s_core::source_model::{build_source_arch, SourceModel, TrainedSource, WidthConfig};
use v2s_core::toy::{toy_source, ToyConfig, ToyData};
use v2s_core::Error;

struct Fixture {
    config: ToyConfig,
    data: ToyData,
    source: TrainedSource,
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = ToyConfig::new(3);
        let data = ToyData::generate(&config).unwrap();
        let source = toy_source(&config, &data).unwrap();
        Fixture { config, data, source }
    })
}

/// One grid cell fitted on the whole training set.
fn direct(config: &ToyConfig, epochs: usize) -> TrainConfig {
    TrainConfig {
        replica_grid: vec![3],
        dropout_grid: vec![0.0],
        folds: 1,
        epochs,
        ..config.train.clone()
    }
}

#[test]
fn training_loss_falls_and_source_is_untouched() {
    let f = fixture();
    let model = &f.source.model;
    let before = model.checksum();
    let mapping = make_label_mapping(8, 2, f.config.mapping_seed).unwrap();
    let out = train_reprogram(
        model,
        &mapping,
        &f.data.target_train,
        Some(&f.data.target_test),
        None,
        &direct(&f.config, 30),
    )
    .unwrap();
    let records = &out.history.records;
    assert_eq!(records.len(), 30);
    assert!(records.last().unwrap().train_loss < records[0].train_loss);
    assert_eq!(model.checksum(), before);
    assert_eq!(out.source_checksum, before);
}

#[test]
fn zero_epochs_keep_the_initial_theta() {
    let f = fixture();
    let mapping = make_label_mapping(8, 2, 1).unwrap();
    let run = || {
        train_reprogram(&f.source.model, &mapping, &f.data.target_train, None, None, &direct(&f.config, 0)).unwrap()
    };
    let out = run();
    assert!(out.history.records.is_empty());
    let init = v2s_core::reprogram::ReprogramPlan::build(512, 64, 3, 0.0, 0.04, 0).unwrap();
    assert_eq!(out.plan.mask(), init.mask());
    assert!(out.plan.theta().iter().all(|v| v.abs() < 0.1));
    assert_eq!(out.plan.theta(), run().plan.theta());
}

#[test]
fn identical_runs_have_identical_histories() {
    let f = fixture();
    let mapping = make_label_mapping(8, 2, 5).unwrap();
    let config = TrainConfig {
        replica_grid: vec![1, 2],
        dropout_grid: vec![0.0, 0.2],
        folds: 3,
        epochs: 3,
        ..f.config.train.clone()
    };
    let run = || train_reprogram(&f.source.model, &mapping, &f.data.target_train, None, None, &config).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.grid, b.grid);
    assert_eq!(a.plan.theta(), b.plan.theta());
    assert_eq!(a.grid.len(), 4);
}

#[test]
fn unfrozen_model_and_wrong_mapping_are_rejected() {
    let f = fixture();
    let thawed = build_source_arch(8, 512, WidthConfig::default(), 0).unwrap();
    let mapping = make_label_mapping(8, 2, 0).unwrap();
    let config = direct(&f.config, 1);
    let err = train_reprogram(&thawed, &mapping, &f.data.target_train, None, None, &config).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let three = make_label_mapping(8, 3, 0).unwrap();
    let err = train_reprogram(&f.source.model, &three, &f.data.target_train, None, None, &config).unwrap_err();
    assert!(matches!(err, Error::Config(_) | Error::Mapping(_)), "{err}");
}

#[test]
fn infeasible_grid_reports_placement() {
    let f = fixture();
    let mapping = make_label_mapping(8, 2, 0).unwrap();
    let config = TrainConfig {
        replica_grid: vec![9, 10],
        ..direct(&f.config, 1)
    };
    let err = train_reprogram(&f.source.model, &mapping, &f.data.target_train, None, None, &config).unwrap_err();
    assert!(matches!(err, Error::Placement { max_m: 8, .. }), "{err}");
}

#[test]
fn baseline_without_training_is_a_random_head() {
    let f = fixture();
    let before = f.source.model.checksum();
    let mut accs = Vec::new();
    for seed in 0..8 {
        let out = finetune_baseline(
            &f.source.model,
            &f.data.target_train,
            &f.data.target_test,
            &BaselineConfig {
                epochs: 0,
                seed,
                ..BaselineConfig::default()
            },
        )
        .unwrap();
        assert!(out.history.records.is_empty());
        assert!(out.param_count > f.source.model.param_count());
        accs.push(out.test_accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((0.25..=0.75).contains(&mean), "mean untrained accuracy {mean} ({accs:?})");
    assert_eq!(f.source.model.checksum(), before);
}

#[test]
fn baseline_training_leaves_source_untouched() {
    let f = fixture();
    let before = f.source.model.checksum();
    let out = finetune_baseline(
        &f.source.model,
        &f.data.target_train,
        &f.data.target_test,
        &BaselineConfig {
            epochs: 3,
            ..BaselineConfig::default()
        },
    )
    .unwrap();
    assert_eq!(out.history.records.len(), 3);
    assert!((0.0..=1.0).contains(&out.test_accuracy));
    assert_eq!(f.source.model.checksum(), before);
}

#[test]
fn files_round_trip() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("source.v2sm");
    f.source.model.save(&model_path).unwrap();
    let loaded = SourceModel::load(&model_path).unwrap();
    assert_eq!(loaded.checksum(), f.source.model.checksum());
    assert!(loaded.is_frozen());

    let mapping = make_label_mapping(8, 2, f.config.mapping_seed).unwrap();
    let out =
        train_reprogram(&loaded, &mapping, &f.data.target_train, None, None, &direct(&f.config, 2)).unwrap();
    let ckpt = ThetaCheckpoint {
        plan: out.plan.clone(),
        mapping: mapping.clone(),
        source_checksum: out.source_checksum.clone(),
    };
    let theta_path = dir.path().join("theta.v2st");
    save_checkpoint(&ckpt, &theta_path).unwrap();
    let back = load_checkpoint(&theta_path).unwrap();
    assert!(back.matches(&loaded));
    let a = evaluate(&loaded, &out.plan, &mapping, &f.data.target_test).unwrap();
    let b = evaluate(&loaded, &back.plan, &back.mapping, &f.data.target_test).unwrap();
    assert_eq!(a.predictions, b.predictions);
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());

    assert!(matches!(
        SourceModel::load(dir.path().join("missing.v2sm")),
        Err(Error::Io { .. })
    ));
}
