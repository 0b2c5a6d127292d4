use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::adjoint_malliavin::{AdjointOptions, ClarkOconeOptions, MaximumOptions};
use crate::cost_opt::GateauxMode;
use crate::error::{Error, Result};
use crate::grid_rng::TimeGrid;
use crate::kernels::KernelSpec;
use crate::lq_game::{LqModel, NashOptions, TimeFunction, VerifyOptions};
use crate::sdde_forward::{
    Arg, ControlProcess, DelaySystem, Dims, InitialPath, LinearCoefficients, Orientation, QuadraticForm,
    ScalarCoefficient, VectorCoefficient,
};
use crate::svie_variation::SvieOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub t0: f64,
    #[serde(alias = "T")]
    pub t_end: f64,
    pub steps: usize,
    #[serde(default)]
    pub delta: f64,
}

impl GridConfig {
    pub fn build(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.t_end, self.steps, self.delta).map_err(|e| Error::config("grid", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    /// Signed so that negative values reach validation instead of failing inside the parser.
    pub paths: i64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { paths: 1000, seed: 0 }
    }
}

impl McConfig {
    pub fn n_paths(&self) -> Result<usize> {
        if self.paths <= 0 {
            return Err(Error::config("mc.paths", format!("must be positive, got {}", self.paths)));
        }
        Ok(self.paths as usize)
    }
}

type Matrix = Vec<Vec<f64>>;

fn arg_by_name(name: &str, field: &str) -> Result<Arg> {
    Arg::ALL
        .into_iter()
        .find(|a| a.name() == name)
        .ok_or_else(|| Error::config(field, format!("unknown argument `{name}`")))
}

fn to_matrix(rows: &Matrix, nrows: usize, ncols: usize, field: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(field, format!("expected a {nrows}×{ncols} matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

/// `matrix·args + offset` given by `n × width` blocks keyed by argument name
/// (`x`, `y`, `z`, `kappa`, `u`, `mu`, `nu`, `lambda`), plus an optional state curvature.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    #[serde(flatten)]
    pub blocks: BTreeMap<String, Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<Vec<f64>>,
}

impl LinearConfig {
    fn build(&self, dims: Dims, field: &str) -> Result<VectorCoefficient> {
        let mut l = LinearCoefficients::zeros(dims);
        for (name, rows) in &self.blocks {
            let f = format!("{field}.{name}");
            let arg = arg_by_name(name, &f)?;
            l.set(dims, arg, &to_matrix(rows, dims.n, dims.width(arg), &f)?);
        }
        if let Some(o) = &self.offset {
            if o.len() != dims.n {
                return Err(Error::config(format!("{field}.offset"), format!("expected {} values", dims.n)));
            }
            l.offset = o.clone();
        }
        Ok(match &self.curvature {
            Some(c) => VectorCoefficient::QuadraticState {
                linear: l,
                curvature: c.clone(),
            },
            None => VectorCoefficient::Linear(l),
        })
    }
}

/// `½ aᵀWa + ⟨linear, a⟩ + constant` with `W` assembled from diagonal blocks keyed by argument
/// name, plus an optional full matrix added on top.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticConfig {
    pub weights: BTreeMap<String, Matrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full: Option<Matrix>,
    pub linear: BTreeMap<String, Vec<f64>>,
    pub constant: f64,
}

impl QuadraticConfig {
    fn build(&self, dims: Dims, state_only: bool, field: &str) -> Result<ScalarCoefficient> {
        let len = if state_only { dims.state_len() } else { dims.args_len() };
        let mut q = QuadraticForm::zeros(len);
        let check = |name: &str, f: &str| -> Result<Arg> {
            let arg = arg_by_name(name, f)?;
            if state_only && !Arg::STATE.contains(&arg) {
                return Err(Error::config(f, "terminal costs depend on x, y, z and kappa only"));
            }
            Ok(arg)
        };
        for (name, rows) in &self.weights {
            let f = format!("{field}.weights.{name}");
            let arg = check(name, &f)?;
            let w = dims.width(arg);
            let block = to_matrix(rows, w, w, &f)?;
            let o = dims.offset(arg);
            q.weights.view_mut((o, o), (w, w)).copy_from(&block);
        }
        if let Some(full) = &self.full {
            q.weights += to_matrix(full, len, len, &format!("{field}.full"))?;
        }
        for (name, v) in &self.linear {
            let f = format!("{field}.linear.{name}");
            let arg = check(name, &f)?;
            if v.len() != dims.width(arg) {
                return Err(Error::config(f, format!("expected {} values", dims.width(arg))));
            }
            let o = dims.offset(arg);
            q.linear[o..o + v.len()].copy_from_slice(v);
        }
        q.constant = self.constant;
        Ok(ScalarCoefficient::Quadratic(q))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub orientation: Orientation,
    #[serde(default)]
    pub drift: LinearConfig,
    #[serde(default)]
    pub diffusion: LinearConfig,
    #[serde(default)]
    pub running_cost: QuadraticConfig,
    #[serde(default)]
    pub terminal_cost: QuadraticConfig,
    #[serde(default)]
    pub phi1: KernelSpec,
    #[serde(default)]
    pub psi1: KernelSpec,
    #[serde(default)]
    pub phi2: KernelSpec,
    #[serde(default)]
    pub psi2: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub varsigma: Option<Vec<f64>>,
}

impl SystemConfig {
    pub fn build(&self, grid: TimeGrid) -> Result<DelaySystem> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::config("system.n", "state and control dimensions must be positive"));
        }
        let dims = Dims::new(self.n, self.m);
        let mut sys = DelaySystem::zero(grid, dims);
        sys.orientation = self.orientation;
        sys.drift = self.drift.build(dims, "system.drift")?;
        sys.diffusion = self.diffusion.build(dims, "system.diffusion")?;
        sys.running_cost = self.running_cost.build(dims, false, "system.running_cost")?;
        sys.terminal_cost = self.terminal_cost.build(dims, true, "system.terminal_cost")?;
        sys.phi1 = self.phi1.clone();
        sys.psi1 = self.psi1.clone();
        sys.phi2 = self.phi2.clone();
        sys.psi2 = self.psi2.clone();
        if let Some(x) = &self.xi {
            sys.xi = InitialPath::Constant(x.clone());
        }
        if let Some(v) = &self.varsigma {
            sys.varsigma = InitialPath::Constant(v.clone());
        }
        sys.validate().map_err(|e| match e {
            Error::ConfigError { field, message } => Error::ConfigError {
                field: format!("system.{field}"),
                message,
            },
            other => other,
        })?;
        Ok(sys)
    }
}

/// Candidate controls and perturbation directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlConfig {
    /// Open-loop control, one time function per component.
    Path { components: Vec<TimeFunction> },
    /// Closed-form optimum of the `[lq]` model.
    LqClosedForm,
    /// Sign-flipped reading of the closed form for the `[lq]` model.
    LqStated,
}

impl ControlConfig {
    pub fn build_path(components: &[TimeFunction], grid: &TimeGrid, m: usize, field: &str) -> Result<ControlProcess> {
        if components.len() != m {
            return Err(Error::config(field, format!("expected {m} components, got {}", components.len())));
        }
        ControlProcess::open_loop(grid, m, |_, t| components.iter().map(|c| c.at(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationConfig {
    /// One-based player index.
    pub player: usize,
    pub components: Vec<TimeFunction>,
    #[serde(default = "one")]
    pub rho: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    pub players: Vec<LqModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation: Option<DeviationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardConfig {
    pub lipschitz: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Largest admissible ratio of successive weighted gaps after the first iteration.
    pub max_ratio: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            lipschitz: 0.1,
            tol: 1e-28,
            max_iter: 200,
            max_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateOptions {
    pub write_paths: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub picard: Option<PicardConfig>,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            write_paths: true,
            picard: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvieMode {
    #[default]
    Expansion,
    Equivalence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvieCheckOptions {
    pub mode: SvieMode,
    pub rhos: Vec<f64>,
    /// Gap bound when the dynamics are linear.
    pub linear_tolerance: f64,
    /// Required ratio `gap(largest ρ) / gap(smallest ρ)` for nonlinear dynamics.
    pub reduction_factor: f64,
    /// Coarsening factors relative to the configured (fine) grid.
    pub factors: Vec<usize>,
    pub order_range: [f64; 2],
    pub svie: SvieOptions,
}

impl Default for SvieCheckOptions {
    fn default() -> Self {
        SvieCheckOptions {
            mode: SvieMode::Expansion,
            rhos: vec![0.4, 0.2, 0.1, 0.05],
            linear_tolerance: 1e-10,
            reduction_factor: 10.0,
            factors: vec![16, 8, 4],
            order_range: [0.35, 0.65],
            svie: SvieOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckOptions {
    pub finite_difference: GateauxMode,
    pub sigmas: f64,
    /// Relative allowance for the finite-difference truncation error.
    pub relative_bias: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            finite_difference: GateauxMode::finite_difference(),
            sigmas: 3.0,
            relative_bias: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointRoute {
    /// Anticipated BSDE when `phi1 = 0`, Volterra route otherwise.
    #[default]
    Auto,
    Absde,
    Bsvie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbsdeOptions {
    pub route: AdjointRoute,
    pub adjoint: AdjointOptions,
    /// When set, every `p` must equal this value and every `q` must vanish within `tolerance`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_p: Option<f64>,
    pub tolerance: f64,
    pub maximum: bool,
    pub maximum_options: MaximumOptions,
    /// Discretization allowance of the maximum condition, in units of `dt`.
    pub maximum_bias_dt: f64,
}

impl Default for AbsdeOptions {
    fn default() -> Self {
        AbsdeOptions {
            route: AdjointRoute::Auto,
            adjoint: AdjointOptions::default(),
            expected_p: None,
            tolerance: 1e-8,
            maximum: false,
            maximum_options: MaximumOptions::default(),
            maximum_bias_dt: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualityOptions {
    /// Number of seeded random linear instances; the configured system is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instances: Option<usize>,
    pub instance_seed: u64,
    pub sigmas: f64,
    pub budget: f64,
    pub adjoint: AdjointOptions,
}

impl Default for DualityOptions {
    fn default() -> Self {
        DualityOptions {
            instances: None,
            instance_seed: 1,
            sigmas: 3.0,
            budget: 0.5,
            adjoint: AdjointOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalConfig {
    BrownianTerminal,
    BrownianTerminalSquared,
    /// Component of `x(T)` for the configured system and control.
    StateTerminal { component: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClarkOconeCliOptions {
    pub functionals: Vec<FunctionalConfig>,
    pub options: ClarkOconeOptions,
    pub max_relative_error: f64,
}

impl Default for ClarkOconeCliOptions {
    fn default() -> Self {
        ClarkOconeCliOptions {
            functionals: vec![FunctionalConfig::BrownianTerminal, FunctionalConfig::BrownianTerminalSquared],
            options: ClarkOconeOptions::default(),
            max_relative_error: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqVerifyCliOptions {
    pub verify: VerifyOptions,
    /// Also evaluate the maximum condition at the closed form and at the closed form plus `shift`.
    pub stationarity: bool,
    pub shift: f64,
    pub adjoint: AdjointOptions,
    pub maximum: MaximumOptions,
    pub maximum_bias_dt: f64,
}

impl Default for LqVerifyCliOptions {
    fn default() -> Self {
        LqVerifyCliOptions {
            verify: VerifyOptions::default(),
            stationarity: true,
            shift: 1.0,
            adjoint: AdjointOptions::default(),
            maximum: MaximumOptions::default(),
            maximum_bias_dt: 2.0,
        }
    }
}

/// One experiment: grid, Monte Carlo parameters, problem source and per-command options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lq: Option<LqModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<GameConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<ControlConfig>,
    #[serde(default)]
    pub simulate: SimulateOptions,
    #[serde(default)]
    pub svie_check: SvieCheckOptions,
    #[serde(default)]
    pub grad_check: GradCheckOptions,
    #[serde(default)]
    pub absde: AbsdeOptions,
    #[serde(default)]
    pub duality: DualityOptions,
    #[serde(default)]
    pub clark_ocone: ClarkOconeCliOptions,
    #[serde(default)]
    pub lq_verify: LqVerifyCliOptions,
    #[serde(default)]
    pub nash: NashOptions,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string() + &span_note(text, e.span())))
    }

    /// Checks everything that does not depend on the subcommand.
    pub fn validate(&self) -> Result<TimeGrid> {
        let grid = self.grid.build()?;
        self.mc.n_paths()?;
        if self.system.is_some() && self.lq.is_some() {
            return Err(Error::config("system", "give either [system] or [lq], not both"));
        }
        if let Some(sys) = &self.system {
            sys.build(grid)?;
        }
        if let Some(lq) = &self.lq {
            lq.validate(&grid).map_err(|e| prefix("lq", e))?;
        }
        if let Some(game) = &self.game {
            if game.players.is_empty() {
                return Err(Error::config("game.players", "at least one player is required"));
            }
            for (i, p) in game.players.iter().enumerate() {
                p.validate(&grid).map_err(|e| prefix(&format!("game.players[{i}]"), e))?;
            }
        }
        Ok(grid)
    }
}

fn prefix(head: &str, e: Error) -> Error {
    match e {
        Error::ConfigError { field, message } => Error::ConfigError {
            field: format!("{head}.{field}"),
            message,
        },
        other => other,
    }
}

fn span_note(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(s) => {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
