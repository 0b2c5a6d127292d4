use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::Result;
use crate::stats::McEstimate;

/// One pass/fail verdict with the quantity it was decided on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// `None` when the quantity is not finite.
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            passed,
            value: finite(value),
            tolerance: finite(tolerance),
            note: String::new(),
        }
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub x: f64,
    pub y: f64,
    pub y_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<SeriesPoint>,
}

impl Series {
    pub fn new(name: impl Into<String>) -> Self {
        Series {
            name: name.into(),
            points: Vec::new(),
        }
    }

    pub fn push(&mut self, x: f64, y: f64, y_stderr: f64) {
        self.points.push(SeriesPoint { x, y, y_stderr });
    }
}

/// Machine-readable outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    /// The configuration text exactly as read.
    pub config_text: String,
    /// The effective configuration after flag overrides; re-running it reproduces the report.
    pub config: ExperimentConfig,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub estimates: BTreeMap<String, McEstimate>,
    pub series: Vec<Series>,
    pub details: serde_json::Value,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| std::io::Error::other(e).into())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| std::io::Error::other(e).into())
    }

    /// Same report with the wall time zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        RunReport {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Long-format plot table `series, x, y, y_stderr`; header only when there are no series.
pub fn emit_plot_data<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["series", "x", "y", "y_stderr"])?;
    for s in &report.series {
        for p in &s.points {
            wr.write_record(&[s.name.clone(), p.x.to_string(), p.y.to_string(), p.y_stderr.to_string()])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
