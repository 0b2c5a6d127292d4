//! Configuration-driven experiment runner behind the `xdelay` binary.

mod config;
mod report;
mod run;

use std::fs;
use std::path::Path;

pub use config::{
    AbsdeOptions, AdjointRoute, ClarkOconeCliOptions, ControlConfig, DeviationConfig, DualityOptions,
    ExperimentConfig, FunctionalConfig, GameConfig, GradCheckOptions, GridConfig, LinearConfig, LqVerifyCliOptions,
    McConfig, PicardConfig, QuadraticConfig, SimulateOptions, SvieCheckOptions, SvieMode, SystemConfig,
};
pub use report::{emit_plot_data, write_atomic, Check, RunReport, Series, SeriesPoint};
pub use run::{run, Command, RunOutput};

use crate::error::Result;

/// Command-line values that replace the corresponding config entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<i64>,
    pub steps: Option<usize>,
    pub t0: Option<f64>,
    pub t_end: Option<f64>,
    pub delta: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.mc.seed = s;
        }
        if let Some(p) = self.paths {
            cfg.mc.paths = p;
        }
        if let Some(n) = self.steps {
            cfg.grid.steps = n;
        }
        if let Some(t) = self.t0 {
            cfg.grid.t0 = t;
        }
        if let Some(t) = self.t_end {
            cfg.grid.t_end = t;
        }
        if let Some(d) = self.delta {
            cfg.grid.delta = d;
        }
    }
}

/// Reads a TOML config file and applies `overrides`; returns the effective config and the raw text.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<(ExperimentConfig, String)> {
    let text = fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    overrides.apply(&mut cfg);
    Ok((cfg, text))
}

/// Writes `report.json`, `plot.csv` and every table of `output` into `dir`.
pub fn write_outputs(dir: &Path, output: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("report.json"), output.report.to_json()?.as_bytes())?;
    let mut plot = Vec::new();
    emit_plot_data(&output.report, &mut plot)?;
    write_atomic(&dir.join("plot.csv"), &plot)?;
    for (name, bytes) in &output.tables {
        write_atomic(&dir.join(name), bytes)?;
    }
    Ok(())
}
