//! Raw per-trial tables, aggregate summaries, and the file writers shared by
//! every experiment.
//!
//! Runners append one raw row per (trial, grid point) in a fixed order, and
//! all aggregates are recomputed from the raw table by [`summarize_grid`],
//! so a verifier can re-derive the summary from `raw.csv` bit for bit.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One value in a raw record.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => write!(f, "{v}"),
            Cell::Text(v) => write!(f, "{v}"),
        }
    }
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

/// A column-labelled table of per-trial records.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl RawTable {
    pub fn new(columns: Vec<&'static str>) -> Self {
        RawTable {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| *c == name)
    }

    /// Column values as floats, in row order.
    pub fn float_column(&self, name: &str) -> Vec<f64> {
        let Some(index) = self.column_index(name) else {
            return Vec::new();
        };
        self.rows
            .iter()
            .filter_map(|row| row[index].as_f64())
            .collect()
    }
}

/// Per-grid-point mean/std/stderr of one error metric, with the fitted
/// log-log slope when the metric decays over a sample-size grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub stderr: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
}

impl MetricSummary {
    pub fn mean_at(&self, x: f64) -> Option<f64> {
        self.grid.iter().position(|g| *g == x).map(|i| self.mean[i])
    }
}

/// Mean, sample standard deviation (ddof 1), and standard error.
pub fn mean_std(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let std = (ss / (n - 1) as f64).sqrt();
    (mean, std, std / (n as f64).sqrt())
}

/// Groups the raw rows by the `x_col` value (in first-appearance order) and
/// aggregates each metric column.
pub fn summarize_grid(raw: &RawTable, x_col: &str, metric_cols: &[&str]) -> Vec<MetricSummary> {
    let x_index = raw
        .column_index(x_col)
        .unwrap_or_else(|| panic!("missing grid column {x_col}"));
    let mut grid: Vec<f64> = Vec::new();
    for row in &raw.rows {
        let x = row[x_index].as_f64().expect("grid column must be numeric");
        if !grid.contains(&x) {
            grid.push(x);
        }
    }
    metric_cols
        .iter()
        .map(|name| {
            let value_index = raw
                .column_index(name)
                .unwrap_or_else(|| panic!("missing metric column {name}"));
            let mut mean = Vec::with_capacity(grid.len());
            let mut std = Vec::with_capacity(grid.len());
            let mut stderr = Vec::with_capacity(grid.len());
            for x in &grid {
                let values: Vec<f64> = raw
                    .rows
                    .iter()
                    .filter(|row| row[x_index].as_f64() == Some(*x))
                    .filter_map(|row| row[value_index].as_f64())
                    .collect();
                let (m, s, se) = mean_std(&values);
                mean.push(m);
                std.push(s);
                stderr.push(se);
            }
            MetricSummary {
                name: name.to_string(),
                grid: grid.clone(),
                mean,
                std,
                stderr,
                slope: None,
            }
        })
        .collect()
}

/// Run provenance stamped into every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub experiment: String,
    pub seed: u64,
}

impl RunMetadata {
    pub fn new(experiment: &str, seed: u64) -> Self {
        RunMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: experiment.to_string(),
            seed,
        }
    }

    fn comment_lines(&self, config_json: &str) -> String {
        format!(
            "# tool: qre-igt {}\n# experiment: {}\n# seed: {}\n# config: {}\n",
            self.tool_version, self.experiment, self.seed, config_json
        )
    }
}

/// Writes a CSV with leading `#` provenance comments.
pub fn write_csv_with_metadata(
    path: &Path,
    metadata: &RunMetadata,
    config_json: &str,
    columns: &[&str],
    rows: impl Iterator<Item = Vec<Cell>>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(metadata.comment_lines(config_json).as_bytes())?;
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record(columns)?;
    for row in rows {
        writer.write_record(row.iter().map(|cell| cell.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads back a CSV written by [`write_csv_with_metadata`], skipping the
/// provenance comments. Cells come back as text.
pub fn read_csv_skipping_comments(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let content = fs::read_to_string(path)?;
    let data: String = content
        .lines()
        .filter(|line| !line.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(data.as_bytes());
    let headers = reader
        .headers()
        .map_err(Error::from)?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(Error::from)?;
        rows.push(record.iter().map(|f| f.to_string()).collect());
    }
    Ok((headers, rows))
}

/// The serialized `summary.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub metadata: RunMetadata,
    pub trials: usize,
    /// Count of failed (trial, grid point) cells, per grid value.
    pub failures: Vec<FailureCount>,
    pub metrics: Vec<MetricSummary>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCount {
    pub x: f64,
    pub count: u64,
}

/// Writes `raw.csv`, `summary.json`, and `plotdata.csv` under `dir`.
///
/// `plotdata.csv` is in long format (one row per metric and grid point with
/// mean/std/stderr columns) so any plotting tool can consume it directly.
pub fn write_experiment_outputs(
    dir: &Path,
    summary: &ExperimentSummary,
    raw: &RawTable,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let config_json = serde_json::to_string(&summary.config)?;

    write_csv_with_metadata(
        &dir.join("raw.csv"),
        &summary.metadata,
        &config_json,
        &raw.columns,
        raw.rows.iter().cloned(),
    )?;

    let plot_columns = ["metric", "x", "mean", "std", "stderr"];
    let plot_rows = summary.metrics.iter().flat_map(|metric| {
        metric.grid.iter().enumerate().map(move |(i, x)| {
            vec![
                Cell::Text(metric.name.clone()),
                Cell::Float(*x),
                Cell::Float(metric.mean[i]),
                Cell::Float(metric.std[i]),
                Cell::Float(metric.stderr[i]),
            ]
        })
    });
    write_csv_with_metadata(
        &dir.join("plotdata.csv"),
        &summary.metadata,
        &config_json,
        &plot_columns,
        plot_rows,
    )?;

    let file = fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(file, summary)?;
    Ok(())
}

/// Recomputes every metric of `summary` from the raw rows on disk and checks
/// the stored aggregates match exactly.
pub fn verify_written_outputs(dir: &Path) -> Result<()> {
    let summary_text = fs::read_to_string(dir.join("summary.json"))?;
    let summary: ExperimentSummary = serde_json::from_str(&summary_text)?;
    let (headers, rows) = read_csv_skipping_comments(&dir.join("raw.csv"))?;

    for metric in &summary.metrics {
        // Bracketed metric names ("error[nls]") store their values in the
        // base column and select rows by the bracketed key.
        let column = metric.name.split('[').next().unwrap_or(&metric.name);
        let Some(value_index) = headers.iter().position(|h| h == column) else {
            return Err(Error::invalid_document(
                "experiment outputs",
                format!("raw.csv lacks a column for metric {}", metric.name),
            ));
        };
        // Grid experiments key rows on their x column; the comparison table
        // keys on the method/tau columns encoded in the metric name.
        for (i, x) in metric.grid.iter().enumerate() {
            let values: Vec<f64> = rows
                .iter()
                .filter(|row| row_matches(&headers, row, metric, *x))
                .map(|row| row[value_index].parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid_document("experiment outputs", e.to_string()))?;
            let (mean, std, stderr) = mean_std(&values);
            let ok = mean.to_bits() == metric.mean[i].to_bits()
                && std.to_bits() == metric.std[i].to_bits()
                && stderr.to_bits() == metric.stderr[i].to_bits();
            if !ok {
                return Err(Error::invalid_document(
                    "experiment outputs",
                    format!(
                        "metric {} at x = {x}: stored ({}, {}, {}), recomputed ({mean}, {std}, {stderr})",
                        metric.name, metric.mean[i], metric.std[i], metric.stderr[i]
                    ),
                ));
            }
        }
    }
    Ok(())
}

fn row_matches(headers: &[String], row: &[String], metric: &MetricSummary, x: f64) -> bool {
    // Bracketed metric names ("error[fixed_tau=2]") select rows by method and
    // tau_assumed instead of a grid column.
    if let Some((_base, selector)) = metric.name.split_once('[') {
        let selector = selector.trim_end_matches(']');
        let (method, tau) = match selector.split_once('=') {
            Some((m, t)) => (m, Some(t)),
            None => (selector, None),
        };
        let method_index = headers.iter().position(|h| h == "method");
        let tau_index = headers.iter().position(|h| h == "tau_assumed");
        let method_ok = method_index.is_some_and(|i| row[i] == method);
        let tau_ok = match (tau, tau_index) {
            (Some(t), Some(i)) => row[i] == t,
            (None, _) => true,
            (Some(_), None) => false,
        };
        return method_ok && tau_ok;
    }
    let x_index = headers
        .iter()
        .position(|h| h == "n" || h == "k" || h == "ratio")
        .expect("raw.csv lacks a grid column");
    row[x_index].parse::<f64>().map(|v| v == x).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_computation() {
        let (mean, std, stderr) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mean, 2.5);
        let expected_std = ((0.25f64 * 9.0 + 0.25 + 0.25 + 2.25) / 3.0).sqrt();
        assert!((std - expected_std).abs() < 1e-15);
        assert!((stderr - expected_std / 2.0).abs() < 1e-15);

        let (mean, std, stderr) = mean_std(&[7.0]);
        assert_eq!((mean, std, stderr), (7.0, 0.0, 0.0));
    }

    #[test]
    fn summarize_groups_by_grid_value_in_order() {
        let mut raw = RawTable::new(vec!["trial", "n", "err"]);
        for trial in 0..3u64 {
            for (i, n) in [10u64, 100].iter().enumerate() {
                raw.push(vec![
                    Cell::Int(trial),
                    Cell::Int(*n),
                    Cell::Float((trial + i as u64) as f64),
                ]);
            }
        }
        let metrics = summarize_grid(&raw, "n", &["err"]);
        assert_eq!(metrics.len(), 1);
        assert_eq!(metrics[0].grid, vec![10.0, 100.0]);
        assert_eq!(metrics[0].mean, vec![1.0, 2.0]);
    }
}
