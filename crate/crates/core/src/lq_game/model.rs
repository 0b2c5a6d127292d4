use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_rng::TimeGrid;
use crate::kernels::{KernelSpec, KernelTerm};
use crate::sdde_forward::{
    Arg, DelaySystem, Dims, InitialPath, LinearCoefficients, Orientation, QuadraticForm, ScalarCoefficient,
    VectorCoefficient,
};

/// Deterministic coefficient `t ↦ value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeFunction {
    Constant(f64),
    /// `intercept + slope·t`
    Affine { intercept: f64, slope: f64 },
    /// Piecewise linear through `(t, value)` knots sorted by `t`, flat outside.
    Knots { knots: Vec<(f64, f64)> },
}

impl Default for TimeFunction {
    fn default() -> Self {
        TimeFunction::Constant(0.0)
    }
}

impl From<f64> for TimeFunction {
    fn from(c: f64) -> Self {
        TimeFunction::Constant(c)
    }
}

impl TimeFunction {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            TimeFunction::Constant(c) => *c,
            TimeFunction::Affine { intercept, slope } => intercept + slope * t,
            TimeFunction::Knots { knots } => {
                let i = knots.partition_point(|(s, _)| *s <= t);
                if i == 0 {
                    return knots[0].1;
                }
                if i == knots.len() {
                    return knots[i - 1].1;
                }
                let (t0, v0) = knots[i - 1];
                let (t1, v1) = knots[i];
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            TimeFunction::Constant(c) => Some(*c),
            TimeFunction::Affine { intercept, slope } if *slope == 0.0 => Some(*intercept),
            _ => None,
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        let ok = match self {
            TimeFunction::Constant(c) => c.is_finite(),
            TimeFunction::Affine { intercept, slope } => intercept.is_finite() && slope.is_finite(),
            TimeFunction::Knots { knots } => {
                !knots.is_empty()
                    && knots.iter().all(|(t, v)| t.is_finite() && v.is_finite())
                    && knots.windows(2).all(|w| w[0].0 < w[1].0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(field, "time function must be finite with strictly increasing knots"))
        }
    }
}

/// Diffusion coefficients multiplying `(x, y, z, κ, u, μ, ν, λ)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqDiffusion {
    pub a: TimeFunction,
    pub b: TimeFunction,
    pub c: TimeFunction,
    pub d: TimeFunction,
    pub f: TimeFunction,
    pub g: TimeFunction,
    pub h: TimeFunction,
    pub k: TimeFunction,
}

impl LqDiffusion {
    fn by_arg(&self) -> [(Arg, &TimeFunction); 8] {
        [
            (Arg::X, &self.a),
            (Arg::Y, &self.b),
            (Arg::Z, &self.c),
            (Arg::Kappa, &self.d),
            (Arg::U, &self.f),
            (Arg::Mu, &self.g),
            (Arg::Nu, &self.h),
            (Arg::Lambda, &self.k),
        ]
    }
}

/// How the closed-form denominator treats the delayed-control weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorReading {
    /// `r1(t) + r2(t+δ)·1_{[t0,T−δ)}(t)`: the delayed cost only charges `u(t)` while `t+δ ≤ T`.
    #[default]
    Indicator,
    /// `r1(t) + r2(t+δ)` on the whole horizon.
    Literal,
}

/// Scalar linear-quadratic problem with mixed delays in the control.
///
/// State `dx = [f u + g μ + h ν + k λ]dt + [ā x + b̄ y + c̄ z + d̄ κ + f̄ u + ḡ μ + h̄ ν + k̄ λ]dW`,
/// cost `E[∫ ½(r1 u² + r2 μ²)dt + w·x(T)]`, minimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqModel {
    pub f: TimeFunction,
    pub g: TimeFunction,
    pub h: TimeFunction,
    pub k: TimeFunction,
    pub diffusion: LqDiffusion,
    pub r1: TimeFunction,
    pub r2: TimeFunction,
    pub phi1: KernelSpec,
    pub psi1: KernelSpec,
    pub phi2: KernelSpec,
    pub psi2: KernelSpec,
    /// Weight `w` of the terminal cost `w·x(T)`.
    pub terminal_weight: f64,
    pub denominator: DenominatorReading,
    pub x0: f64,
    /// Control history on `[t0 − δ, t0)`.
    pub control_history: f64,
}

impl Default for LqModel {
    fn default() -> Self {
        LqModel {
            f: 0.0.into(),
            g: 0.0.into(),
            h: 0.0.into(),
            k: 0.0.into(),
            diffusion: LqDiffusion::default(),
            r1: 1.0.into(),
            r2: 0.0.into(),
            phi1: KernelSpec::zero(),
            psi1: KernelSpec::zero(),
            phi2: KernelSpec::zero(),
            psi2: KernelSpec::zero(),
            terminal_weight: 0.5,
            denominator: DenominatorReading::Indicator,
            x0: 0.0,
            control_history: 0.0,
        }
    }
}

impl LqModel {
    /// The worked instance: `f = g = h = k = 2`, `φ2 = 2`, `r1 = r2 = 1`.
    pub fn worked_example() -> Self {
        LqModel {
            f: 2.0.into(),
            g: 2.0.into(),
            h: 2.0.into(),
            k: 2.0.into(),
            r1: 1.0.into(),
            r2: 1.0.into(),
            phi2: KernelSpec::constant(2.0),
            ..LqModel::default()
        }
    }

    fn drift_by_arg(&self) -> [(Arg, &TimeFunction); 4] {
        [(Arg::U, &self.f), (Arg::Mu, &self.g), (Arg::Nu, &self.h), (Arg::Lambda, &self.k)]
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        for (name, tf) in [("f", &self.f), ("g", &self.g), ("h", &self.h), ("k", &self.k)] {
            tf.validate(name)?;
        }
        for (arg, tf) in self.diffusion.by_arg() {
            tf.validate(&format!("diffusion.{}", arg.name()))?;
        }
        self.r1.validate("r1")?;
        self.r2.validate("r2")?;
        for k in 0..=grid.n_steps {
            let t = grid.t(k);
            if self.r1.at(t) < 0.0 || self.r2.at(t) < 0.0 {
                return Err(Error::config("r1", format!("cost weights must be nonnegative (t = {t})")));
            }
        }
        self.phi1.validate(grid, 1, "phi1")?;
        self.psi1.validate(grid, 1, "psi1")?;
        self.phi2.validate(grid, 1, "phi2")?;
        self.psi2.validate(grid, 1, "psi2")?;
        if !self.terminal_weight.is_finite() || !self.x0.is_finite() || !self.control_history.is_finite() {
            return Err(Error::config("terminal_weight", "terminal weight and initial values must be finite"));
        }
        Ok(())
    }
}

/// An [`LqModel`] on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LqSpec {
    pub grid: TimeGrid,
    pub model: LqModel,
}

impl LqSpec {
    pub fn new(grid: TimeGrid, model: LqModel) -> Result<Self> {
        model.validate(&grid)?;
        Ok(LqSpec { grid, model })
    }

    pub fn build_system(&self) -> Result<DelaySystem> {
        let mut sys = block_system(self.grid, std::slice::from_ref(&self.model))?;
        let (running, terminal) = player_costs(self.grid, sys.dims, 0, &self.model);
        sys.running_cost = running;
        sys.terminal_cost = terminal;
        sys.validate()?;
        Ok(sys)
    }
}

/// Places `models[i]` on state `i` and control `i` of a block-diagonal system without costs.
pub(crate) fn block_system(grid: TimeGrid, models: &[LqModel]) -> Result<DelaySystem> {
    if models.is_empty() {
        return Err(Error::InvalidInput("at least one model is required".into()));
    }
    for m in models {
        m.validate(&grid)?;
    }
    let np = models.len();
    let dims = Dims::new(np, np);
    let mut sys = DelaySystem::zero(grid, dims);
    let owned: Arc<Vec<LqModel>> = Arc::new(models.to_vec());

    let drift_const = models.iter().all(|m| m.drift_by_arg().iter().all(|(_, f)| f.as_constant().is_some()));
    let ms = owned.clone();
    let drift = move |t: f64| {
        let mut l = LinearCoefficients::zeros(dims);
        for (i, m) in ms.iter().enumerate() {
            for (arg, tf) in m.drift_by_arg() {
                l.matrix[(i, dims.offset(arg) + i)] = tf.at(t);
            }
        }
        l
    };
    sys.drift = if drift_const {
        VectorCoefficient::Linear(drift(grid.t0))
    } else {
        VectorCoefficient::TimeLinear(Arc::new(drift))
    };

    let diff_const = models
        .iter()
        .all(|m| m.diffusion.by_arg().iter().all(|(_, f)| f.as_constant().is_some()));
    let ms = owned;
    let diffusion = move |t: f64| {
        let mut l = LinearCoefficients::zeros(dims);
        for (i, m) in ms.iter().enumerate() {
            for (arg, tf) in m.diffusion.by_arg() {
                l.matrix[(i, dims.offset(arg) + i)] = tf.at(t);
            }
        }
        l
    };
    sys.diffusion = if diff_const {
        VectorCoefficient::Linear(diffusion(grid.t0))
    } else {
        VectorCoefficient::TimeLinear(Arc::new(diffusion))
    };

    sys.phi1 = block_kernel(models.iter().map(|m| &m.phi1), np);
    sys.psi1 = block_kernel(models.iter().map(|m| &m.psi1), np);
    sys.phi2 = block_kernel(models.iter().map(|m| &m.phi2), np);
    sys.psi2 = block_kernel(models.iter().map(|m| &m.psi2), np);
    sys.xi = InitialPath::Constant(models.iter().map(|m| m.x0).collect());
    sys.varsigma = InitialPath::Constant(models.iter().map(|m| m.control_history).collect());
    sys.orientation = Orientation::Minimize;
    Ok(sys)
}

fn block_kernel<'a>(kernels: impl Iterator<Item = &'a KernelSpec>, np: usize) -> KernelSpec {
    let kernels: Vec<&KernelSpec> = kernels.collect();
    if np == 1 {
        return kernels[0].clone();
    }
    let mut terms = Vec::new();
    for (i, k) in kernels.iter().enumerate() {
        for term in &k.terms {
            let scale = term.matrix.as_ref().map_or(1.0, |m| m[0][0]);
            let mut matrix = vec![vec![0.0; np]; np];
            matrix[i][i] = scale;
            terms.push(KernelTerm {
                form: term.form.clone(),
                matrix: Some(matrix),
            });
        }
    }
    KernelSpec { terms }
}

/// Running cost `½(r1 u_i² + r2 μ_i²)` and terminal cost `w·x_i(T)` of player `i`.
pub(crate) fn player_costs(
    grid: TimeGrid,
    dims: Dims,
    i: usize,
    model: &LqModel,
) -> (ScalarCoefficient, ScalarCoefficient) {
    let len = dims.args_len();
    let (r1, r2) = (model.r1.clone(), model.r2.clone());
    let form = move |t: f64| {
        let mut q = QuadraticForm::zeros(len);
        q.weights[(dims.offset(Arg::U) + i, dims.offset(Arg::U) + i)] = r1.at(t);
        q.weights[(dims.offset(Arg::Mu) + i, dims.offset(Arg::Mu) + i)] = r2.at(t);
        q
    };
    let running = if model.r1.as_constant().is_some() && model.r2.as_constant().is_some() {
        ScalarCoefficient::Quadratic(form(grid.t0))
    } else {
        ScalarCoefficient::TimeQuadratic(Arc::new(form))
    };
    let mut h = QuadraticForm::zeros(dims.state_len());
    h.linear[dims.offset(Arg::X) + i] = model.terminal_weight;
    (running, ScalarCoefficient::Quadratic(h))
}
