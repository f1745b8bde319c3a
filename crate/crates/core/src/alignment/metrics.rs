use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One dataset's test outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub name: String,
    pub accuracy: f64,
    pub class_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub name: String,
    pub accuracy: f64,
    /// Error rate in percent.
    pub error: f64,
    pub class_count: usize,
    pub pce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub datasets: Vec<DatasetMetrics>,
    pub pce: Vec<f64>,
    pub mpce: f64,
    pub mean_acc: f64,
    pub median_acc: f64,
}

/// Per-class error (percent error / class count) per dataset, their mean
/// (MPCE) and the mean/median accuracy.
pub fn metrics(results: &[DatasetResult]) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::Argument("metrics need at least one dataset".into()));
    }
    let mut datasets = Vec::with_capacity(results.len());
    for r in results {
        if !(0.0..=1.0).contains(&r.accuracy) {
            return Err(Error::Argument(format!("accuracy {} of {} outside [0, 1]", r.accuracy, r.name)));
        }
        if r.class_count < 2 {
            return Err(Error::Argument(format!("{} has {} classes, need >= 2", r.name, r.class_count)));
        }
        let error = 100.0 - 100.0 * r.accuracy;
        datasets.push(DatasetMetrics {
            name: r.name.clone(),
            accuracy: r.accuracy,
            error,
            class_count: r.class_count,
            pce: error / r.class_count as f64,
        });
    }
    let n = datasets.len() as f64;
    let pce: Vec<f64> = datasets.iter().map(|d| d.pce).collect();
    let mpce = pce.iter().sum::<f64>() / n;
    let mean_acc = results.iter().map(|r| r.accuracy).sum::<f64>() / n;
    let mut accs: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    accs.sort_unstable_by(f64::total_cmp);
    let mid = accs.len() / 2;
    let median_acc = if accs.len() % 2 == 1 {
        accs[mid]
    } else {
        (accs[mid - 1] + accs[mid]) / 2.0
    };
    Ok(MetricsReport {
        datasets,
        pce,
        mpce,
        mean_acc,
        median_acc,
    })
}
