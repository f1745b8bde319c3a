use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Role, TimeSeries};
use crate::seed::rng;
use crate::{Error, Result};

/// Waveform family used by the synthetic generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaveKind {
    /// Class k is a random-phase sinusoid with (k+1)·base cycles.
    Sinusoid,
    /// Class k has k+1 Gaussian bumps spread evenly over the series.
    Bumps,
    /// Class k is a single Gaussian-windowed oscillation with (k+1)·base cycles.
    Bursts,
}

impl FromStr for WaveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid" | "source" => Ok(WaveKind::Sinusoid),
            "bumps" | "target" => Ok(WaveKind::Bumps),
            "bursts" => Ok(WaveKind::Bursts),
            other => Err(Error::Argument(format!("unknown waveform kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: WaveKind,
    pub class_count: usize,
    pub length: usize,
    pub samples_per_class: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Argument(format!(
                "class_count must be >= 2, got {}",
                self.class_count
            )));
        }
        if self.length < 8 {
            return Err(Error::Argument(format!("length must be >= 8, got {}", self.length)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Argument(format!(
                "noise_std must be a nonnegative real, got {}",
                self.noise_std
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Argument("samples_per_class must be >= 1".into()));
        }
        Ok(())
    }

    /// Reads a flat `key=value` listing. Unknown keys are rejected.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut spec = SynthSpec {
            kind: WaveKind::Sinusoid,
            class_count: 8,
            length: 512,
            samples_per_class: 200,
            noise_std: 0.1,
            seed: 0,
        };
        for (key, value) in crate::dataio::parse_kv(text)? {
            let bad = |_| Error::Argument(format!("bad value {value:?} for {key}"));
            match key.as_str() {
                "kind" => spec.kind = value.parse()?,
                "classes" | "class_count" => spec.class_count = value.parse().map_err(bad)?,
                "len" | "length" => spec.length = value.parse().map_err(bad)?,
                "n" | "samples_per_class" => spec.samples_per_class = value.parse().map_err(bad)?,
                "noise" | "noise_std" => {
                    spec.noise_std = value
                        .parse()
                        .map_err(|_| Error::Argument(format!("bad value {value:?} for {key}")))?
                }
                "seed" => spec.seed = value.parse().map_err(bad)?,
                other => return Err(Error::Argument(format!("unknown key {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Cycles per series for class 0 of the periodic families.
    fn base_cycles(&self) -> f64 {
        (self.length / (16 * self.class_count)).max(1) as f64
    }
}

fn generate(spec: &SynthSpec, role: Role, name: &str) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).expect("validated noise_std");
    let len = spec.length;
    let lf = len as f64;
    let base = spec.base_cycles();
    let mut series = Vec::with_capacity(spec.class_count * spec.samples_per_class);
    for class in 0..spec.class_count {
        for _ in 0..spec.samples_per_class {
            let mut values = vec![0.0; len];
            match spec.kind {
                WaveKind::Sinusoid => {
                    let phase = rng.random_range(0.0..2.0 * PI);
                    let freq = base * (class + 1) as f64 / lf;
                    for (i, v) in values.iter_mut().enumerate() {
                        *v = (2.0 * PI * freq * i as f64 + phase).sin();
                    }
                }
                WaveKind::Bumps => {
                    let width = lf / 8.0;
                    let shift = rng.random_range(-lf / 32.0..lf / 32.0);
                    let bumps = class + 1;
                    for b in 0..bumps {
                        let centre = (b + 1) as f64 * lf / (bumps + 1) as f64 + shift;
                        for (i, v) in values.iter_mut().enumerate() {
                            let z = (i as f64 - centre) / (width / (bumps as f64).sqrt());
                            *v += (-0.5 * z * z).exp();
                        }
                    }
                }
                WaveKind::Bursts => {
                    let centre = lf / 2.0 + rng.random_range(-lf / 16.0..lf / 16.0);
                    let width = lf / 6.0;
                    let phase = rng.random_range(0.0..2.0 * PI);
                    let freq = base * (class + 1) as f64 / lf;
                    for (i, v) in values.iter_mut().enumerate() {
                        let z = (i as f64 - centre) / width;
                        *v = (-0.5 * z * z).exp() * (2.0 * PI * freq * i as f64 + phase).sin();
                    }
                }
            }
            for v in &mut values {
                *v += noise.sample(&mut rng);
            }
            series.push(TimeSeries { values, label: class });
        }
    }
    Dataset::new(name, role, series, spec.class_count)
}

/// Source-domain generator; class k carries a dominant frequency ∝ k+1 for
/// the sinusoid family.
pub fn synth_source(spec: &SynthSpec) -> Result<Dataset> {
    generate(spec, Role::Source, "synth-source")
}

/// Target-domain generator (localized patterns by default).
pub fn synth_target(spec: &SynthSpec) -> Result<Dataset> {
    generate(spec, Role::Target, "synth-target")
}
