//! Reports, raw tables and their serialization.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numbers;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scalar {
    pub name: String,
    #[serde(with = "numbers")]
    pub value: f64,
}

impl Scalar {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Self { name: name.into(), value }
    }
}

/// A norm-level quantity for one test function; `ratio = value / ‖f‖₂` (0 when `f = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    #[serde(with = "numbers")]
    pub value: f64,
    #[serde(with = "numbers")]
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionResult {
    pub index: usize,
    pub f_norm: f64,
    pub metrics: Vec<Metric>,
}

/// One row of the refinement table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub index: usize,
    pub grid_doublings: u32,
    pub partition: usize,
    pub points: usize,
    pub spacing: f64,
    pub functions: Vec<FunctionResult>,
    /// Largest ratio per metric over the family.
    pub family_max: Vec<Scalar>,
    pub scalars: Vec<Scalar>,
}

impl Level {
    pub fn family_max(&self, name: &str) -> Option<f64> {
        self.family_max.iter().find(|s| s.name == name).map(|s| s.value)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|s| s.name == name).map(|s| s.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeControl {
    pub kernel: String,
    pub lambda: f64,
    pub depths: Vec<usize>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub harness_version: String,
    pub core_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub kernel: String,
    pub seed: u64,
    pub provenance: Provenance,
    pub levels: Vec<Level>,
    #[serde(default)]
    pub negative_control: Vec<NegativeControl>,
    pub criteria: Vec<Criterion>,
    pub passed: bool,
}

impl ExperimentReport {
    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }
}

/// A raw CSV dump, named by file stem.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl RawTable {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| numbers::label(*v)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(name: &str, path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| match s {
                    "inf" => Ok(f64::INFINITY),
                    _ => s.parse::<f64>(),
                })
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| crate::error::config_error(format!("{}: {e}", path.display())))?;
            rows.push(row);
        }
        Ok(Self { name: name.to_string(), header, rows })
    }
}

/// A report together with the raw columns it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: ExperimentReport,
    pub tables: Vec<RawTable>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

pub fn report_json(report: &ExperimentReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Flat `summary.csv`: one row per (level, function, metric); `function = -1` holds the family maximum.
pub fn write_summary_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record([
        "level",
        "grid_doublings",
        "partition",
        "points",
        "function",
        "f_norm",
        "metric",
        "value",
        "ratio",
    ])?;
    for lv in &report.levels {
        let head =
            [lv.index.to_string(), lv.grid_doublings.to_string(), lv.partition.to_string(), lv.points.to_string()];
        for f in &lv.functions {
            for m in &f.metrics {
                let mut rec = head.to_vec();
                rec.extend([
                    f.index.to_string(),
                    numbers::label(f.f_norm),
                    m.name.clone(),
                    numbers::label(m.value),
                    numbers::label(m.ratio),
                ]);
                w.write_record(&rec)?;
            }
        }
        for s in lv.family_max.iter().chain(&lv.scalars) {
            let mut rec = head.to_vec();
            rec.extend(["-1".into(), String::new(), s.name.clone(), numbers::label(s.value), String::new()]);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json` and/or `summary.csv`, plus every raw table as `<name>.csv`, into `dir`.
pub fn emit_report(outcome: &Outcome, dir: &Path, formats: &[Format]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for f in formats {
        match f {
            Format::Json => fs::write(dir.join("report.json"), report_json(&outcome.report)?)?,
            Format::Csv => write_summary_csv(&outcome.report, &dir.join("summary.csv"))?,
        }
    }
    for t in &outcome.tables {
        t.write_csv(&dir.join(format!("{}.csv", t.name)))?;
    }
    Ok(())
}
