//! Report records and files.
//!
//! A run emits line-delimited JSON records (one per method and seed) plus a
//! human-readable table. Timing lives in its own file so the structured
//! outputs are byte-identical across reruns of the same configuration;
//! reproducibility checks compare `records.jsonl` and `summary.json`
//! directly.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TABLE_FILE: &str = "table.txt";
pub const CONFIG_FILE: &str = "config.txt";

/// One method evaluated under one seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecordRow {
    pub method: String,
    pub seed: u64,
    pub eta: f64,
    pub coverage: f64,
    pub mean_volume: f64,
    pub alpha_q: f64,
    /// Volume weight used by the learned method; absent for the others.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub calib_size: usize,
    /// Fingerprint of the train/validation/test index lists, shared by all
    /// methods within a seed.
    pub split_checksum: String,
}

/// Wall-clock timing, kept out of the deterministic record stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub seed: u64,
    pub wall_time_ms: u64,
}

/// Aggregate statistics for one method across seeds.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub count: usize,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub volume_mean: f64,
    pub volume_std: f64,
    /// True when only one record exists and the stds are reported as zero.
    pub single_record: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub eta: f64,
    pub repetitions: usize,
    pub base_seed: u64,
    pub aggregates: Vec<AggregateRow>,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sample mean and standard deviation (denominator `count - 1`) per method,
/// in first-appearance order of the records.
pub fn aggregate_report(records: &[RecordRow]) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        bail!("no records to aggregate");
    }
    let mut methods: Vec<&str> = Vec::new();
    for r in records {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut rows = Vec::new();
    for method in methods {
        let coverages: Vec<f64> = records
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.coverage)
            .collect();
        let volumes: Vec<f64> = records
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.mean_volume)
            .collect();
        let (coverage_mean, coverage_std) = mean_and_std(&coverages);
        let (volume_mean, volume_std) = mean_and_std(&volumes);
        rows.push(AggregateRow {
            method: method.to_string(),
            count: coverages.len(),
            coverage_mean,
            coverage_std,
            volume_mean,
            volume_std,
            single_record: coverages.len() == 1,
        });
    }
    Ok(rows)
}

/// Render aggregates as an aligned text table: a coverage block and a
/// volume block, methods as rows.
pub fn render_table(summary: &Summary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "dataset {}   eta {}   repetitions {}\n\n",
        summary.dataset, summary.eta, summary.repetitions
    ));
    out.push_str(&format!(
        "{:<8} {:>18} {:>22}\n",
        "method", "coverage mean±std", "volume mean±std"
    ));
    for row in &summary.aggregates {
        let flag = if row.single_record { "  (single record)" } else { "" };
        out.push_str(&format!(
            "{:<8} {:>10.4} ±{:<6.4} {:>14.4} ±{:<10.4}{}\n",
            row.method,
            row.coverage_mean,
            row.coverage_std,
            row.volume_mean,
            row.volume_std,
            flag
        ));
    }
    out
}

/// Write bytes via a temp file in the same directory plus an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "file".into());
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)
            .with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = String::new();
    for row in rows {
        buf.push_str(&serde_json::to_string(row)?);
        buf.push('\n');
    }
    write_atomic(path, buf.as_bytes())
}

pub fn read_records(dir: &Path) -> Result<Vec<RecordRow>> {
    let path = dir.join(RECORDS_FILE);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("parsing record {l:?}")))
        .collect()
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).context("parsing summary")
}

/// Reload a report directory, recompute the aggregates from the per-seed
/// records, and verify they match the stored summary exactly.
pub fn load_and_verify(dir: &Path) -> Result<Summary> {
    let records = read_records(dir)?;
    let summary = read_summary(dir)?;
    let recomputed = aggregate_report(&records)?;
    if recomputed != summary.aggregates {
        bail!(
            "stored aggregates in {} do not match the per-seed records",
            dir.display()
        );
    }
    Ok(summary)
}
