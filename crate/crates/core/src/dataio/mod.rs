//! Datasets: UCR-format ingestion, synthetic source/target generators,
//! normalization and deterministic splits.

mod split;
mod synth;
mod ucr;

pub use split::{split_holdout, split_kfold, FoldSplit};
pub use synth::{synth_source, synth_target, SynthSpec, WaveKind};
pub use ucr::{load_ucr, parse_ucr, write_ucr};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One labeled univariate series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Source,
    Target,
}

/// Labeled series sharing one length and one class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    role: Role,
    series: Vec<TimeSeries>,
    length: usize,
    class_count: usize,
}

impl Dataset {
    /// Builds a dataset and checks every invariant: non-empty, uniform length,
    /// finite values, labels in range and every class present.
    pub fn new(
        name: impl Into<String>,
        role: Role,
        series: Vec<TimeSeries>,
        class_count: usize,
    ) -> Result<Self> {
        let ds = Self::new_unchecked_coverage(name, role, series, class_count)?;
        let mut seen = vec![false; class_count];
        for s in &ds.series {
            seen[s.label] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Argument(format!(
                "class {missing} of {class_count} has no samples"
            )));
        }
        Ok(ds)
    }

    fn new_unchecked_coverage(
        name: impl Into<String>,
        role: Role,
        series: Vec<TimeSeries>,
        class_count: usize,
    ) -> Result<Self> {
        let first = series.first().ok_or(Error::EmptyDataset)?;
        let length = first.values.len();
        if length == 0 {
            return Err(Error::Argument("series must have at least one value".into()));
        }
        for (i, s) in series.iter().enumerate() {
            if s.values.len() != length {
                return Err(Error::Shape(format!(
                    "series {i} has length {} but dataset length is {length}",
                    s.values.len()
                )));
            }
            if s.label >= class_count {
                return Err(Error::Argument(format!(
                    "series {i} has label {} outside [0, {class_count})",
                    s.label
                )));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument(format!("series {i} has non-finite values")));
            }
        }
        Ok(Self {
            name: name.into(),
            role,
            series,
            length,
            class_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn series(&self) -> &[TimeSeries] {
        &self.series
    }

    /// Series length d_T (or d_S for a source dataset).
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.series.iter().map(|s| s.label).collect()
    }

    /// Rows selected by `indices`, in that order. Class coverage is not
    /// required of a subset (a small fold may miss a class).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let series = indices
            .iter()
            .map(|&i| {
                self.series.get(i).cloned().ok_or_else(|| {
                    Error::Argument(format!("index {i} out of range for {} rows", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new_unchecked_coverage(self.name.clone(), self.role, series, self.class_count)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormPolicy {
    #[default]
    None,
    PerSeriesZ,
}

impl std::str::FromStr for NormPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormPolicy::None),
            "per-series-z" | "z" => Ok(NormPolicy::PerSeriesZ),
            other => Err(Error::Argument(format!("unknown normalization policy {other:?}"))),
        }
    }
}

const STD_GUARD: f64 = 1e-8;

/// Applies `policy` to every series. Series with std below 1e-8 are left as is.
pub fn normalize(dataset: &Dataset, policy: NormPolicy) -> Dataset {
    let mut out = dataset.clone();
    if policy == NormPolicy::None {
        return out;
    }
    for s in &mut out.series {
        let n = s.values.len() as f64;
        let mean = s.values.iter().sum::<f64>() / n;
        let var = s.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < STD_GUARD {
            continue;
        }
        for v in &mut s.values {
            *v = (*v - mean) / std;
        }
    }
    out
}

/// Parses a flat `key=value` listing; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
            line: i + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: Vec<Vec<f64>>) -> Dataset {
        let series = rows
            .into_iter()
            .enumerate()
            .map(|(i, values)| TimeSeries { values, label: i % 2 })
            .collect();
        Dataset::new("t", Role::Target, series, 2).unwrap()
    }

    #[test]
    fn z_normalization() {
        let d = normalize(&ds(vec![vec![1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0]]), NormPolicy::PerSeriesZ);
        let v = &d.series()[0].values;
        let mean = v.iter().sum::<f64>() / 3.0;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-12);
        assert_eq!(d.series()[1].values, vec![5.0, 5.0, 5.0]);
        assert_eq!(d.labels(), vec![0, 1]);
    }

    #[test]
    fn policy_none_is_identity() {
        let d = ds(vec![vec![1.0, -2.0], vec![0.5, 9.0]]);
        assert_eq!(normalize(&d, NormPolicy::None), d);
    }

    #[test]
    fn rejects_ragged_and_bad_labels() {
        let ragged = vec![
            TimeSeries { values: vec![1.0, 2.0], label: 0 },
            TimeSeries { values: vec![1.0], label: 1 },
        ];
        assert!(matches!(Dataset::new("r", Role::Target, ragged, 2), Err(Error::Shape(_))));
        let bad = vec![TimeSeries { values: vec![1.0], label: 3 }];
        assert!(Dataset::new("b", Role::Target, bad, 2).is_err());
        assert!(matches!(
            Dataset::new("e", Role::Target, vec![], 2),
            Err(Error::EmptyDataset)
        ));
    }
}
