//! Per-run rows, mean and standard deviation over seeds, and their on-disk forms.
//!
//! `report.jsonl` holds a header line with the config hash followed by one line per run, and
//! `aggregate.csv` one line per method and metric. Wall-clock timings go to a separate
//! `timings.jsonl` so that reruns of the same config produce byte-identical reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub task_loss: f64,
    pub align_loss: f64,
    pub total: f64,
    pub validation_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub full_align_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: String,
    pub seed: u64,
    /// Test metrics on target-test data, keyed by metric name.
    pub metrics: BTreeMap<String, f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub curve: Vec<CurvePoint>,
    /// Mean attention weight per extractor on target-train data, for fusion runs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_beta: Option<Vec<f64>>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    /// Wall-clock training and evaluation time; written to `timings.jsonl`, not the report.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl RunRow {
    pub fn failed(method: String, seed: u64, error: String) -> Self {
        RunRow {
            method,
            seed,
            metrics: BTreeMap::new(),
            epochs_run: 0,
            best_epoch: 0,
            stopped_early: false,
            curve: Vec::new(),
            mean_beta: None,
            warnings: Vec::new(),
            error: Some(error),
            wall_seconds: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<Aggregate>,
}

#[derive(Serialize)]
struct Header<'a> {
    config_hash: &'a str,
    runs: usize,
}

impl RunReport {
    pub fn new(config_hash: String, rows: Vec<RunRow>) -> Self {
        let aggregates = aggregate(&rows);
        RunReport { config_hash, rows, aggregates }
    }

    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }

    pub fn mean(&self, method: &str, metric: &str) -> Option<f64> {
        self.aggregates.iter().find(|a| a.method == method && a.metric == metric).map(|a| a.mean)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Header { config_hash: &self.config_hash, runs: self.rows.len() })
            .expect("header serializes");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("method,metric,mean,std,runs\n");
        for a in &self.aggregates {
            let _ = writeln!(out, "{},{},{},{},{}", a.method, a.metric, a.mean, a.std, a.runs);
        }
        out
    }

    /// Writes `report.jsonl` and `aggregate.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.jsonl"), self.to_jsonl())?;
        std::fs::write(dir.join("aggregate.csv"), self.aggregate_csv())?;
        Ok(())
    }
}

/// Mean and sample standard deviation per method and metric over successful runs. Methods
/// keep their first-appearance order; metrics are sorted by name.
pub fn aggregate(rows: &[RunRow]) -> Vec<Aggregate> {
    let mut order: Vec<&str> = Vec::new();
    let mut values: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.error.is_none()) {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
        for (k, v) in &r.metrics {
            values.entry((&r.method, k)).or_default().push(*v);
        }
    }
    let mut out = Vec::new();
    for m in order {
        for ((_, metric), v) in values.range((m, "")..).take_while(|((mm, _), _)| *mm == m) {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std =
                if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            out.push(Aggregate { method: m.to_string(), metric: metric.to_string(), mean, std, runs: v.len() });
        }
    }
    out
}
