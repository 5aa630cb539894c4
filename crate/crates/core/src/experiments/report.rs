use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::lrs::LrsSolution;
use crate::netsim::{BoundaryTrace, SnapshotRow};

use super::config::ScenarioConfig;

/// Pass/fail outcome of one check, tied to the acceptance criterion it covers.
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub criterion: String,
    pub description: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Verdict {
    /// Passes when `value <= tolerance`.
    pub fn at_most(criterion: &str, description: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            criterion: criterion.into(),
            description: description.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }

    /// Passes when `value < tolerance`.
    pub fn below(criterion: &str, description: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            passed: value < tolerance,
            ..Self::at_most(criterion, description, value, tolerance)
        }
    }

    pub fn flag(criterion: &str, description: impl Into<String>, passed: bool) -> Self {
        Self {
            criterion: criterion.into(),
            description: description.into(),
            value: if passed { 1.0 } else { 0.0 },
            tolerance: 1.0,
            passed,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TimeSample {
    pub time: f64,
    pub queues: Vec<f64>,
    pub traces: Vec<BoundaryTrace>,
    /// L1 distance to the LRS solution, when it was measured.
    pub l1: Option<f64>,
    pub conservation_error: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub title: String,
    pub scenario: Option<ScenarioConfig>,
    pub lrs: Option<LrsSolution>,
    pub series: Vec<TimeSample>,
    pub snapshots: Vec<SnapshotRow>,
    pub tables: Vec<Table>,
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn new(title: impl Into<String>, scenario: Option<ScenarioConfig>) -> Self {
        Self {
            title: title.into(),
            scenario,
            lrs: None,
            series: Vec::new(),
            snapshots: Vec::new(),
            tables: Vec::new(),
            verdicts: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict_lines(&self) -> Vec<String> {
        self.verdicts
            .iter()
            .map(|v| {
                format!(
                    "[{}] {}: {} (value {:.6e}, tolerance {:.6e})",
                    if v.passed { "PASS" } else { "FAIL" },
                    v.criterion,
                    v.description,
                    v.value,
                    v.tolerance
                )
            })
            .collect()
    }

    /// Human-readable summary written to `report.txt`.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "== {} ==", self.title);
        if let Some(cfg) = &self.scenario {
            let _ = writeln!(out, "\n-- scenario --");
            match cfg.to_toml() {
                Ok(text) => out.push_str(&text),
                Err(e) => {
                    let _ = writeln!(out, "(could not serialize scenario: {e})");
                }
            }
        }
        if let Some(sol) = &self.lrs {
            let _ = writeln!(out, "\n-- limit Riemann solver --");
            let _ = write!(out, "{sol}");
        }
        for table in &self.tables {
            let _ = writeln!(out, "\n-- {} --", table.title);
            let _ = writeln!(out, "{}", table.header.join("\t"));
            for row in &table.rows {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.6e}")).collect();
                let _ = writeln!(out, "{}", cells.join("\t"));
            }
        }
        if !self.notes.is_empty() {
            let _ = writeln!(out, "\n-- notes --");
            for note in &self.notes {
                let _ = writeln!(out, "{note}");
            }
        }
        if !self.verdicts.is_empty() {
            let _ = writeln!(out, "\n-- verdicts --");
            for line in self.verdict_lines() {
                let _ = writeln!(out, "{line}");
            }
            let _ = writeln!(
                out,
                "overall: {}",
                if self.passed() { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

#[derive(Serialize)]
struct QueueRow {
    time: f64,
    j: usize,
    q_j: f64,
}

#[derive(Serialize)]
struct BoundaryRow {
    time: f64,
    road_id: usize,
    rho_trace: f64,
    omega: f64,
    flux: f64,
}

#[derive(Serialize)]
struct L1Row {
    time: f64,
    l1: f64,
    l1_over_t: f64,
    conservation_error: f64,
}

/// Writes `report.txt` and the CSV series into `dir`; returns the files written.
pub fn write_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let summary = dir.join("report.txt");
    fs::write(&summary, report.summary())?;
    written.push(summary);

    if !report.series.is_empty() {
        let m = report.lrs.as_ref().map_or(0, LrsSolution::incoming);

        let path = dir.join("queues.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for s in &report.series {
            for (j, q) in s.queues.iter().enumerate() {
                w.serialize(QueueRow {
                    time: s.time,
                    j: m + j + 1,
                    q_j: *q,
                })?;
            }
        }
        w.flush()?;
        written.push(path);

        let path = dir.join("boundary.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for s in &report.series {
            for (k, tr) in s.traces.iter().enumerate() {
                w.serialize(BoundaryRow {
                    time: s.time,
                    road_id: k + 1,
                    rho_trace: tr.rho,
                    omega: tr.omega,
                    flux: tr.flux,
                })?;
            }
        }
        w.flush()?;
        written.push(path);

        let path = dir.join("l1.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for s in &report.series {
            if let Some(l1) = s.l1 {
                w.serialize(L1Row {
                    time: s.time,
                    l1,
                    l1_over_t: if s.time > 0.0 { l1 / s.time } else { 0.0 },
                    conservation_error: s.conservation_error,
                })?;
            }
        }
        w.flush()?;
        written.push(path);
    }

    if !report.snapshots.is_empty() {
        let path = dir.join("snapshots.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for row in &report.snapshots {
            w.serialize(row)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
