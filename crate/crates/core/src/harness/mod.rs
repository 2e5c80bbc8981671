//! Experiment drivers and result files.
//!
//! An experiment writes, into its output directory:
//!
//! * `metrics.csv`, or `metrics_<group>.csv` per settings group (`d100`,
//!   `r3`, ...): one row per (trial, method, n, checkpoint) with columns
//!   `iteration,n,algorithm,kernel_variant,seed,mse_mean,mse_second,mmd2,ksd2,rmse`;
//!   `seed` is the derived trial seed;
//! * `summary.csv`: mean and standard error over trials of every metric;
//! * `runs.json`: per-run logs (bandwidths and direction norms at each
//!   checkpoint);
//! * particle dumps, when requested.

mod config;
mod experiments;
mod reference;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub use config::{
    CrowdSettings, Experiment, ExperimentConfig, GaussianSettings, KernelName, MethodKind,
    MethodSpec, ReferencePoolSettings, SensorInit, SensorInstance, SensorSettings,
};
pub use experiments::{
    audit_experiment, builtin_model, ksd_null, local_ksd, mode_split, reflect, run_experiment,
    ExperimentResult, KsdNullReport, ParticleDump, Record, BUILTIN_MODELS, SMALL_AMBIGUOUS, SMALL_CUTOFF,
    SMALL_ANCHORS, SMALL_SENSORS,
};
pub use reference::{gaussian_truth, langevin_pool, pool_truth, GroundTruth, MmdReference};

const STANDARD_METRICS: [&str; 5] = ["mse_mean", "mse_second", "mmd2", "ksd2", "rmse"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub group: String,
    pub algorithm: String,
    pub kernel_variant: String,
    pub n: usize,
    pub iteration: usize,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(trials)`; empty for one trial.
    pub stderr: Option<f64>,
    pub trials: usize,
}

/// `(mean, sample sd / sqrt(k))`; the standard error is `None` for `k < 2`.
pub fn mean_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, Some((var / k).sqrt()))
}

/// Trial averages keyed by (group, algorithm, kernel, n, iteration), in
/// first-appearance order.
pub fn summarize(records: &[Record]) -> Vec<SummaryRow> {
    type Key = (String, String, String, usize, usize);
    let mut order: Vec<Key> = Vec::new();
    let mut values: BTreeMap<Key, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut metric_order: BTreeMap<Key, Vec<String>> = BTreeMap::new();
    for r in records {
        let key = (
            r.group.clone(),
            r.row.algorithm.clone(),
            r.row.kernel_variant.clone(),
            r.row.n,
            r.row.iteration,
        );
        if !values.contains_key(&key) {
            order.push(key.clone());
        }
        let names = metric_order.entry(key.clone()).or_default();
        let slot = values.entry(key).or_default();
        let extra_names = r.extras.iter().map(|(k, _)| k.as_str());
        for name in STANDARD_METRICS.iter().copied().chain(extra_names) {
            if let Some(v) = r.metric(name) {
                if !names.iter().any(|n| n == name) {
                    names.push(name.to_string());
                }
                slot.entry(name.to_string()).or_default().push(v);
            }
        }
    }
    let mut out = Vec::new();
    for key in order {
        for name in &metric_order[&key] {
            let v = &values[&key][name];
            let (mean, stderr) = mean_stderr(v);
            out.push(SummaryRow {
                group: key.0.clone(),
                algorithm: key.1.clone(),
                kernel_variant: key.2.clone(),
                n: key.3,
                iteration: key.4,
                metric: name.clone(),
                mean,
                stderr,
                trials: v.len(),
            });
        }
    }
    out
}

/// Writes metrics, summary, run logs and dumps into `dir`; returns the
/// number of metric rows.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<usize> {
    fs::create_dir_all(dir)?;
    let mut by_group: BTreeMap<&str, Vec<&Record>> = BTreeMap::new();
    for r in &result.records {
        by_group.entry(r.group.as_str()).or_default().push(r);
    }
    let mut rows = 0;
    for (group, recs) in by_group {
        let name = if group.is_empty() {
            "metrics.csv".to_string()
        } else {
            format!("metrics_{group}.csv")
        };
        let mut w = csv::Writer::from_path(dir.join(name))?;
        for r in recs {
            w.serialize(&r.row)?;
            rows += 1;
        }
        w.flush()?;
    }

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for s in summarize(&result.records) {
        w.serialize(s)?;
    }
    w.flush()?;

    fs::write(dir.join("runs.json"), serde_json::to_string_pretty(&result.logs)?)?;
    for d in &result.dumps {
        fs::write(dir.join(&d.file), serde_json::to_string(&d.content)?)?;
    }
    Ok(rows)
}
