//! The seeded desk-scale pipeline: an 8-class sinusoid source task and a
//! 2-class bump target task.

use serde::{Deserialize, Serialize};

use crate::alignment::SwdTracker;
use crate::dataio::{synth_source, synth_target, Dataset, SynthSpec, WaveKind};
use crate::reprogram::{evaluate, make_label_mapping, train_reprogram, LabelMapping, ReprogramOutcome, TrainConfig};
use crate::seed::derive_seed;
use crate::source_model::{build_source_arch, train_source, SourceHyper, TrainedSource, WidthConfig};
use crate::Result;

/// Reduced search grid of the toy run; the full grid is 10 x 5 cells.
pub const TOY_REPLICA_GRID: [usize; 4] = [1, 2, 3, 4];
pub const TOY_DROPOUT_GRID: [f64; 2] = [0.0, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub source: SynthSpec,
    pub target_train: SynthSpec,
    pub target_test: SynthSpec,
    pub width: WidthConfig,
    pub source_hyper: SourceHyper,
    pub train: TrainConfig,
    pub mapping_seed: u64,
    pub swd_seed: u64,
    pub model_seed: u64,
}

impl ToyConfig {
    pub fn new(seed: u64) -> Self {
        let spec = |kind, class_count, length, samples_per_class, label| SynthSpec {
            kind,
            class_count,
            length,
            samples_per_class,
            noise_std: 0.1,
            seed: derive_seed(seed, label),
        };
        Self {
            source: spec(WaveKind::Sinusoid, 8, 512, 200, "source-data"),
            target_train: spec(WaveKind::Bumps, 2, 64, 30, "target-train"),
            target_test: spec(WaveKind::Bumps, 2, 64, 100, "target-test"),
            width: WidthConfig::default(),
            source_hyper: SourceHyper {
                seed: derive_seed(seed, "source-train"),
                ..SourceHyper::default()
            },
            train: TrainConfig {
                replica_grid: TOY_REPLICA_GRID.to_vec(),
                dropout_grid: TOY_DROPOUT_GRID.to_vec(),
                seed: derive_seed(seed, "reprogram"),
                ..TrainConfig::default()
            },
            mapping_seed: derive_seed(seed, "mapping"),
            swd_seed: derive_seed(seed, "swd"),
            model_seed: derive_seed(seed, "source-init"),
        }
    }
}

pub struct ToyData {
    pub source: Dataset,
    pub target_train: Dataset,
    pub target_test: Dataset,
}

impl ToyData {
    pub fn generate(config: &ToyConfig) -> Result<Self> {
        Ok(Self {
            source: synth_source(&config.source)?,
            target_train: synth_target(&config.target_train)?,
            target_test: synth_target(&config.target_test)?.with_name("synth-target-test"),
        })
    }
}

pub fn toy_source(config: &ToyConfig, data: &ToyData) -> Result<TrainedSource> {
    let model = build_source_arch(
        config.source.class_count,
        config.source.length,
        config.width,
        config.model_seed,
    )?;
    train_source(&model, &data.source, &config.source_hyper)
}

pub struct ToyReprogram {
    pub mapping: LabelMapping,
    pub outcome: ReprogramOutcome,
    pub test_accuracy: f64,
}

/// Reprograms `source` for the toy target, tracking SWD on the test set.
pub fn toy_reprogram(config: &ToyConfig, data: &ToyData, source: &TrainedSource) -> Result<ToyReprogram> {
    let model = &source.model;
    let mapping = make_label_mapping(model.class_count(), data.target_train.class_count(), config.mapping_seed)?;
    let tracker = SwdTracker::with_default_sizes(model, &data.source, config.swd_seed)?;
    let outcome = train_reprogram(
        model,
        &mapping,
        &data.target_train,
        Some(&data.target_test),
        Some(&tracker),
        &config.train,
    )?;
    let test_accuracy = evaluate(model, &outcome.plan, &mapping, &data.target_test)?.accuracy;
    Ok(ToyReprogram {
        mapping,
        outcome,
        test_accuracy,
    })
}
