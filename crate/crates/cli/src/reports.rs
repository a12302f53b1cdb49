//! Report emission: the CSV and JSON files every command writes. All files
//! are built in memory and written in one call so reruns are byte-identical,
//! and every float is printed in shortest round-trip form so aggregates in
//! metrics.json recompute exactly from the row-level CSVs.

use std::collections::BTreeMap;
use std::path::Path;

use mfrl_core::eval::{CalibrationReport, SpectrumReport};
use mfrl_core::repr::EpochRecord;

use crate::config::fmt_f64;
use crate::error::{io_at, CliError, Result};

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_at(parent, e))?;
        }
    }
    std::fs::write(path, content).map_err(|e| io_at(path, e))
}

pub fn train_log_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,lr\n");
    for rec in log {
        out.push_str(&format!(
            "{},{},{}\n",
            rec.epoch,
            fmt_f64(rec.loss),
            fmt_f64(rec.lr)
        ));
    }
    out
}

pub fn reliability_csv(report: &CalibrationReport) -> String {
    let mut out = String::from("bin_lo,bin_hi,confidence,accuracy,count\n");
    for b in 0..report.bin_count.len() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(report.bin_edges[b]),
            fmt_f64(report.bin_edges[b + 1]),
            fmt_f64(report.bin_confidence[b]),
            fmt_f64(report.bin_accuracy[b]),
            report.bin_count[b]
        ));
    }
    out
}

pub fn spectrum_csv(report: &SpectrumReport) -> String {
    let mut out = String::from("index,sigma,sigma_norm\n");
    for (i, (s, n)) in report
        .singular_values
        .iter()
        .zip(&report.normalized)
        .enumerate()
    {
        out.push_str(&format!("{},{},{}\n", i, fmt_f64(*s), fmt_f64(*n)));
    }
    out
}

/// One regression test task scored with the evidence head.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionRow {
    pub task: usize,
    pub mse: f64,
    pub noise_std: f64,
    pub converged: bool,
}

pub fn regression_results_csv(rows: &[RegressionRow]) -> String {
    let mut out = String::from("task,mse,noise_std,converged\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.task,
            fmt_f64(r.mse),
            fmt_f64(r.noise_std),
            r.converged
        ));
    }
    out
}

/// `accuracies[r]` holds run r's per-episode accuracies; run ids are printed
/// as given (test runs are numbered from 1, run 0 being validation).
pub fn classification_results_csv(run_ids: &[usize], accuracies: &[Vec<f64>]) -> String {
    let mut out = String::from("run,episode,accuracy\n");
    for (&run, vals) in run_ids.iter().zip(accuracies) {
        for (episode, acc) in vals.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", run, episode, fmt_f64(*acc)));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub swa_lr: f64,
    pub swa_duration: usize,
    pub value: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("swa_lr,swa_duration,value\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(r.swa_lr),
            r.swa_duration,
            fmt_f64(r.value)
        ));
    }
    out
}

pub fn compare_csv(rows: &[(String, f64)]) -> String {
    let mut out = String::from("variant,value\n");
    for (variant, value) in rows {
        out.push_str(&format!("{},{}\n", variant, fmt_f64(*value)));
    }
    out
}

/// metrics.json body: keys sorted, floats shortest round-trip, one trailing
/// newline. Only finite values are accepted.
pub fn metrics_json(entries: &BTreeMap<String, MetricValue>) -> Result<String> {
    let mut out = String::from("{\n");
    for (i, (key, value)) in entries.iter().enumerate() {
        out.push_str(&format!("  \"{key}\": "));
        match value {
            MetricValue::Float(v) => {
                if !v.is_finite() {
                    return Err(CliError::Numeric(format!(
                        "metric {key} is not finite: {v}"
                    )));
                }
                out.push_str(&fmt_f64(*v));
            }
            MetricValue::Int(v) => out.push_str(&v.to_string()),
            MetricValue::Text(v) => out.push_str(&format!("\"{v}\"")),
        }
        if i + 1 < entries.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("}\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricValue {
    Float(f64),
    Int(u64),
    Text(String),
}

impl From<f64> for MetricValue {
    fn from(v: f64) -> Self {
        MetricValue::Float(v)
    }
}

impl From<u64> for MetricValue {
    fn from(v: u64) -> Self {
        MetricValue::Int(v)
    }
}

impl From<&str> for MetricValue {
    fn from(v: &str) -> Self {
        MetricValue::Text(v.to_string())
    }
}

/// Splits CSV text into (header, rows). Fields are plain comma-separated
/// (none of our writers quote), so this is enough for recompute checks.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Io("empty CSV".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != header.len() {
            return Err(CliError::Io(format!(
                "CSV row {} has {} fields, header has {}",
                i + 2,
                fields.len(),
                header.len()
            )));
        }
        rows.push(fields);
    }
    Ok((header, rows))
}
