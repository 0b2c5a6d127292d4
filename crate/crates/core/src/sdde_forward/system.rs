use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_rng::TimeGrid;
use crate::kernels::KernelSpec;

/// One argument slot of the coefficient signature `(x, y, z, κ, u, μ, ν, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arg {
    X,
    Y,
    Z,
    Kappa,
    U,
    Mu,
    Nu,
    Lambda,
}

impl Arg {
    pub const ALL: [Arg; 8] = [Arg::X, Arg::Y, Arg::Z, Arg::Kappa, Arg::U, Arg::Mu, Arg::Nu, Arg::Lambda];
    pub const STATE: [Arg; 4] = [Arg::X, Arg::Y, Arg::Z, Arg::Kappa];
    pub const CONTROL: [Arg; 4] = [Arg::U, Arg::Mu, Arg::Nu, Arg::Lambda];

    pub fn name(self) -> &'static str {
        match self {
            Arg::X => "x",
            Arg::Y => "y",
            Arg::Z => "z",
            Arg::Kappa => "kappa",
            Arg::U => "u",
            Arg::Mu => "mu",
            Arg::Nu => "nu",
            Arg::Lambda => "lambda",
        }
    }
}

/// State dimension `n` and control dimension `m`. Arguments are stacked as
/// `[x, y, z, κ]` (each `n`) followed by `[u, μ, ν, λ]` (each `m`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
}

impl Dims {
    pub fn new(n: usize, m: usize) -> Self {
        Dims { n, m }
    }

    pub fn args_len(&self) -> usize {
        4 * self.n + 4 * self.m
    }

    pub fn state_len(&self) -> usize {
        4 * self.n
    }

    pub fn width(&self, a: Arg) -> usize {
        match a {
            Arg::X | Arg::Y | Arg::Z | Arg::Kappa => self.n,
            _ => self.m,
        }
    }

    pub fn offset(&self, a: Arg) -> usize {
        let n = self.n;
        let m = self.m;
        match a {
            Arg::X => 0,
            Arg::Y => n,
            Arg::Z => 2 * n,
            Arg::Kappa => 3 * n,
            Arg::U => 4 * n,
            Arg::Mu => 4 * n + m,
            Arg::Nu => 4 * n + 2 * m,
            Arg::Lambda => 4 * n + 3 * m,
        }
    }

    pub fn range(&self, a: Arg) -> std::ops::Range<usize> {
        let o = self.offset(a);
        o..o + self.width(a)
    }
}

/// `b(t, a) = matrix·a + offset` with `a` the stacked argument vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCoefficients {
    pub matrix: DMatrix<f64>,
    pub offset: Vec<f64>,
}

impl LinearCoefficients {
    pub fn zeros(dims: Dims) -> Self {
        LinearCoefficients {
            matrix: DMatrix::zeros(dims.n, dims.args_len()),
            offset: vec![0.0; dims.n],
        }
    }

    /// Set the `n × width(arg)` block multiplying `arg`.
    pub fn set(&mut self, dims: Dims, arg: Arg, block: &DMatrix<f64>) -> &mut Self {
        let o = dims.offset(arg);
        self.matrix.view_mut((0, o), (dims.n, dims.width(arg))).copy_from(block);
        self
    }

    /// Scalar shortcut for one-dimensional state and control.
    pub fn with(mut self, dims: Dims, arg: Arg, value: f64) -> Self {
        let b = DMatrix::from_element(dims.n, dims.width(arg), value);
        self.set(dims, arg, &b);
        self
    }

    pub fn block(&self, dims: Dims, arg: Arg) -> DMatrix<f64> {
        self.matrix.view((0, dims.offset(arg)), (dims.n, dims.width(arg))).into_owned()
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|v| *v == 0.0) && self.offset.iter().all(|v| *v == 0.0)
    }
}

pub type VectorFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type LinearSchedule = Arc<dyn Fn(f64) -> LinearCoefficients + Send + Sync>;
pub type QuadraticSchedule = Arc<dyn Fn(f64) -> QuadraticForm + Send + Sync>;

/// Drift or diffusion coefficient.
#[derive(Clone)]
pub enum VectorCoefficient {
    Linear(LinearCoefficients),
    /// Linear part plus `½·curvature_i·x_i²` on each state component.
    QuadraticState {
        linear: LinearCoefficients,
        curvature: Vec<f64>,
    },
    /// Linear in the arguments with time-dependent coefficients; exact Jacobian.
    TimeLinear(LinearSchedule),
    /// General callable `(t, args, out)`; derivatives by central differences.
    Custom(VectorFn),
}

impl fmt::Debug for VectorCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorCoefficient::Linear(l) => f.debug_tuple("Linear").field(l).finish(),
            VectorCoefficient::QuadraticState { linear, curvature } => f
                .debug_struct("QuadraticState")
                .field("linear", linear)
                .field("curvature", curvature)
                .finish(),
            VectorCoefficient::TimeLinear(_) => f.write_str("TimeLinear(..)"),
            VectorCoefficient::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Central-difference step for callables.
#[inline]
pub fn fd_step(a: f64) -> f64 {
    1e-4 * (1.0 + a.abs())
}

impl VectorCoefficient {
    pub fn zero(dims: Dims) -> Self {
        VectorCoefficient::Linear(LinearCoefficients::zeros(dims))
    }

    pub fn eval(&self, t: f64, args: &[f64], out: &mut [f64]) {
        match self {
            VectorCoefficient::Linear(l) => linear_eval(l, args, out),
            VectorCoefficient::QuadraticState { linear, curvature } => {
                linear_eval(linear, args, out);
                for (i, c) in curvature.iter().enumerate() {
                    out[i] += 0.5 * c * args[i] * args[i];
                }
            }
            VectorCoefficient::TimeLinear(f) => linear_eval(&f(t), args, out),
            VectorCoefficient::Custom(f) => f(t, args, out),
        }
    }

    /// Row-major `n × args_len` Jacobian.
    pub fn jacobian(&self, t: f64, args: &[f64], n: usize, out: &mut [f64]) {
        let len = args.len();
        match self {
            VectorCoefficient::Linear(l) => copy_matrix(&l.matrix, out),
            VectorCoefficient::QuadraticState { linear, curvature } => {
                copy_matrix(&linear.matrix, out);
                for (i, c) in curvature.iter().enumerate() {
                    out[i * len + i] += c * args[i];
                }
            }
            VectorCoefficient::TimeLinear(f) => copy_matrix(&f(t).matrix, out),
            VectorCoefficient::Custom(f) => {
                let mut a = args.to_vec();
                let mut hi = vec![0.0; n];
                let mut lo = vec![0.0; n];
                for c in 0..len {
                    let h = fd_step(args[c]);
                    a[c] = args[c] + h;
                    f(t, &a, &mut hi);
                    a[c] = args[c] - h;
                    f(t, &a, &mut lo);
                    a[c] = args[c];
                    for r in 0..n {
                        out[r * len + c] = (hi[r] - lo[r]) / (2.0 * h);
                    }
                }
            }
        }
    }

    /// True when the Jacobian does not depend on `(t, args)`.
    pub fn has_constant_jacobian(&self) -> bool {
        match self {
            VectorCoefficient::Linear(_) => true,
            VectorCoefficient::QuadraticState { curvature, .. } => curvature.iter().all(|c| *c == 0.0),
            VectorCoefficient::TimeLinear(_) | VectorCoefficient::Custom(_) => false,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            VectorCoefficient::Linear(l) => l.is_zero(),
            VectorCoefficient::QuadraticState { linear, curvature } => {
                linear.is_zero() && curvature.iter().all(|c| *c == 0.0)
            }
            VectorCoefficient::TimeLinear(_) | VectorCoefficient::Custom(_) => false,
        }
    }

    fn validate(&self, dims: Dims, grid: &TimeGrid, field: &str) -> Result<()> {
        let check = |l: &LinearCoefficients| -> Result<()> {
            if l.matrix.nrows() != dims.n || l.matrix.ncols() != dims.args_len() || l.offset.len() != dims.n {
                return Err(Error::config(field, "coefficient matrix has the wrong shape"));
            }
            if l.matrix.iter().chain(&l.offset).any(|v| !v.is_finite()) {
                return Err(Error::config(field, "coefficients must be finite"));
            }
            Ok(())
        };
        match self {
            VectorCoefficient::Linear(l) => check(l),
            VectorCoefficient::QuadraticState { linear, curvature } => {
                check(linear)?;
                if curvature.len() != dims.n || curvature.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config(field, "curvature must hold n finite values"));
                }
                Ok(())
            }
            VectorCoefficient::TimeLinear(f) => {
                check(&f(grid.t0))?;
                check(&f(grid.t_end))
            }
            VectorCoefficient::Custom(_) => Ok(()),
        }
    }
}

fn linear_eval(l: &LinearCoefficients, args: &[f64], out: &mut [f64]) {
    let cols = l.matrix.ncols();
    for (r, o) in out.iter_mut().enumerate() {
        let mut s = l.offset[r];
        for c in 0..cols {
            s += l.matrix[(r, c)] * args[c];
        }
        *o = s;
    }
}

fn copy_matrix(m: &DMatrix<f64>, out: &mut [f64]) {
    let cols = m.ncols();
    for r in 0..m.nrows() {
        for c in 0..cols {
            out[r * cols + c] = m[(r, c)];
        }
    }
}

/// `½ aᵀ·weights·a + linearᵀa + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub weights: DMatrix<f64>,
    pub linear: Vec<f64>,
    pub constant: f64,
}

impl QuadraticForm {
    pub fn zeros(len: usize) -> Self {
        QuadraticForm {
            weights: DMatrix::zeros(len, len),
            linear: vec![0.0; len],
            constant: 0.0,
        }
    }

    fn eval(&self, a: &[f64]) -> f64 {
        let n = a.len();
        let mut s = self.constant;
        for i in 0..n {
            s += self.linear[i] * a[i];
            let mut row = 0.0;
            for j in 0..n {
                row += self.weights[(i, j)] * a[j];
            }
            s += 0.5 * a[i] * row;
        }
        s
    }

    fn gradient(&self, a: &[f64], out: &mut [f64]) {
        let n = a.len();
        for i in 0..n {
            let mut g = self.linear[i];
            for j in 0..n {
                g += 0.5 * (self.weights[(i, j)] + self.weights[(j, i)]) * a[j];
            }
            out[i] = g;
        }
    }

    pub fn is_linear(&self) -> bool {
        self.weights.iter().all(|v| *v == 0.0)
    }
}

/// Running cost `l(t, args)` or terminal cost `h(x, y, z, κ)`.
#[derive(Clone)]
pub enum ScalarCoefficient {
    Quadratic(QuadraticForm),
    /// Quadratic in the arguments with time-dependent weights; exact gradient.
    TimeQuadratic(QuadraticSchedule),
    Custom(ScalarFn),
}

impl fmt::Debug for ScalarCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarCoefficient::Quadratic(q) => f.debug_tuple("Quadratic").field(q).finish(),
            ScalarCoefficient::TimeQuadratic(_) => f.write_str("TimeQuadratic(..)"),
            ScalarCoefficient::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl ScalarCoefficient {
    pub fn zero(len: usize) -> Self {
        ScalarCoefficient::Quadratic(QuadraticForm::zeros(len))
    }

    pub fn eval(&self, t: f64, a: &[f64]) -> f64 {
        match self {
            ScalarCoefficient::Quadratic(q) => q.eval(a),
            ScalarCoefficient::TimeQuadratic(f) => f(t).eval(a),
            ScalarCoefficient::Custom(f) => f(t, a),
        }
    }

    pub fn gradient(&self, t: f64, a: &[f64], out: &mut [f64]) {
        match self {
            ScalarCoefficient::Quadratic(q) => q.gradient(a, out),
            ScalarCoefficient::TimeQuadratic(f) => f(t).gradient(a, out),
            ScalarCoefficient::Custom(f) => {
                let mut x = a.to_vec();
                for i in 0..a.len() {
                    let h = fd_step(a[i]);
                    x[i] = a[i] + h;
                    let hi = f(t, &x);
                    x[i] = a[i] - h;
                    let lo = f(t, &x);
                    x[i] = a[i];
                    out[i] = (hi - lo) / (2.0 * h);
                }
            }
        }
    }

    /// True when the gradient is the same at every argument.
    pub fn has_constant_gradient(&self) -> bool {
        match self {
            ScalarCoefficient::Quadratic(q) => q.is_linear(),
            ScalarCoefficient::TimeQuadratic(_) | ScalarCoefficient::Custom(_) => false,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScalarCoefficient::Quadratic(q) => {
                q.is_linear() && q.constant == 0.0 && q.linear.iter().all(|v| *v == 0.0)
            }
            ScalarCoefficient::TimeQuadratic(_) | ScalarCoefficient::Custom(_) => false,
        }
    }

    fn validate(&self, len: usize, grid: &TimeGrid, field: &str) -> Result<()> {
        let check = |q: &QuadraticForm| -> Result<()> {
            if q.weights.nrows() != len || q.weights.ncols() != len || q.linear.len() != len {
                return Err(Error::config(field, format!("cost needs a {len}-dimensional quadratic form")));
            }
            if q.weights.iter().chain(&q.linear).any(|v| !v.is_finite()) || !q.constant.is_finite() {
                return Err(Error::config(field, "cost coefficients must be finite"));
            }
            Ok(())
        };
        match self {
            ScalarCoefficient::Quadratic(q) => check(q),
            ScalarCoefficient::TimeQuadratic(f) => {
                check(&f(grid.t0))?;
                check(&f(grid.t_end))
            }
            ScalarCoefficient::Custom(_) => Ok(()),
        }
    }
}

/// Whether the problem instance minimizes or maximizes its cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    Minimize,
    Maximize,
}

impl Orientation {
    /// `+1` for minimization, `−1` for maximization: an improving move lowers `sign·J`.
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Minimize => 1.0,
            Orientation::Maximize => -1.0,
        }
    }
}

/// A path on `[t0 − δ, t0]`, indexed by grid offsets `−d..=0`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialPath {
    Constant(Vec<f64>),
    /// `values[i]` holds the point at grid index `i − d`.
    Tabulated(Vec<Vec<f64>>),
}

impl InitialPath {
    pub fn constant(v: f64) -> Self {
        InitialPath::Constant(vec![v])
    }

    pub fn zeros(dim: usize) -> Self {
        InitialPath::Constant(vec![0.0; dim])
    }

    /// Value at grid index `k ∈ −d..=0`.
    pub fn at(&self, grid: &TimeGrid, k: isize) -> &[f64] {
        match self {
            InitialPath::Constant(v) => v,
            InitialPath::Tabulated(rows) => {
                let i = (k + grid.delay_steps as isize).clamp(0, rows.len() as isize - 1);
                &rows[i as usize]
            }
        }
    }

    fn validate(&self, grid: &TimeGrid, dim: usize, field: &str) -> Result<()> {
        match self {
            InitialPath::Constant(v) => {
                if v.len() != dim {
                    return Err(Error::config(field, format!("initial path needs {dim} components")));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::config(field, "initial path must be finite"));
                }
            }
            InitialPath::Tabulated(rows) => {
                if rows.len() != grid.delay_steps + 1 || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::config(
                        field,
                        format!("tabulated initial path needs {} points of dimension {dim}", grid.delay_steps + 1),
                    ));
                }
                if rows.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(Error::config(field, "initial path must be finite"));
                }
            }
        }
        Ok(())
    }
}

/// Full problem instance: dynamics, costs, kernels, initial paths and orientation.
#[derive(Debug, Clone)]
pub struct DelaySystem {
    pub grid: TimeGrid,
    pub dims: Dims,
    pub drift: VectorCoefficient,
    pub diffusion: VectorCoefficient,
    pub running_cost: ScalarCoefficient,
    pub terminal_cost: ScalarCoefficient,
    pub phi1: KernelSpec,
    pub psi1: KernelSpec,
    pub phi2: KernelSpec,
    pub psi2: KernelSpec,
    pub xi: InitialPath,
    pub varsigma: InitialPath,
    pub orientation: Orientation,
}

impl DelaySystem {
    /// The all-zero system on `grid`: no dynamics, no cost, zero initial paths.
    pub fn zero(grid: TimeGrid, dims: Dims) -> Self {
        DelaySystem {
            grid,
            dims,
            drift: VectorCoefficient::zero(dims),
            diffusion: VectorCoefficient::zero(dims),
            running_cost: ScalarCoefficient::zero(dims.args_len()),
            terminal_cost: ScalarCoefficient::zero(dims.state_len()),
            phi1: KernelSpec::zero(),
            psi1: KernelSpec::zero(),
            phi2: KernelSpec::zero(),
            psi2: KernelSpec::zero(),
            xi: InitialPath::zeros(dims.n),
            varsigma: InitialPath::zeros(dims.m),
            orientation: Orientation::Minimize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.n == 0 || d.m == 0 {
            return Err(Error::config("dims", "state and control dimensions must be positive"));
        }
        let g = &self.grid;
        self.drift.validate(d, g, "drift")?;
        self.diffusion.validate(d, g, "diffusion")?;
        self.running_cost.validate(d.args_len(), g, "running_cost")?;
        self.terminal_cost.validate(d.state_len(), g, "terminal_cost")?;
        self.phi1.validate(&self.grid, d.n, "phi1")?;
        self.psi1.validate(&self.grid, d.n, "psi1")?;
        self.phi2.validate(&self.grid, d.m, "phi2")?;
        self.psi2.validate(&self.grid, d.m, "psi2")?;
        self.xi.validate(&self.grid, d.n, "xi")?;
        self.varsigma.validate(&self.grid, d.m, "varsigma")?;
        Ok(())
    }

    /// Same system on another grid with the same delay.
    pub fn on_grid(&self, grid: TimeGrid) -> Self {
        DelaySystem { grid, ..self.clone() }
    }
}
