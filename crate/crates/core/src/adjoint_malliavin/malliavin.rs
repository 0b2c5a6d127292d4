use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::regression::{Features, LazyRegression, RegressionOptions};
use crate::error::{Error, Result};
use crate::grid_rng::{BrownianEnsemble, TimeGrid};
use crate::sdde_forward::{simulate, ControlProcess, DelaySystem};
use crate::stats::{mean_var, variance_std_err, McEstimate};

/// A Wiener functional evaluated from one path of increments.
pub trait PathFunctional: Sync {
    fn label(&self) -> String;

    fn eval(&self, grid: &TimeGrid, dw: &[f64]) -> f64;

    /// `F` with `ΔW_j` replaced by `ΔW_j + h`.
    fn eval_bumped(&self, grid: &TimeGrid, dw: &[f64], j: usize, h: f64) -> f64 {
        let mut b = dw.to_vec();
        b[j] += h;
        self.eval(grid, &b)
    }

    /// Central differences `∂F/∂ΔW_j` for every `j` in `steps`.
    fn derivatives(&self, grid: &TimeGrid, dw: &[f64], steps: std::ops::Range<usize>, eps: f64) -> Vec<f64> {
        steps
            .map(|j| (self.eval_bumped(grid, dw, j, eps) - self.eval_bumped(grid, dw, j, -eps)) / (2.0 * eps))
            .collect()
    }
}

/// `F = W(T)`.
#[derive(Debug, Clone, Copy)]
pub struct BrownianTerminal;

impl PathFunctional for BrownianTerminal {
    fn label(&self) -> String {
        "W(T)".into()
    }

    fn eval(&self, _grid: &TimeGrid, dw: &[f64]) -> f64 {
        dw.iter().sum()
    }

    fn eval_bumped(&self, grid: &TimeGrid, dw: &[f64], _j: usize, h: f64) -> f64 {
        self.eval(grid, dw) + h
    }

    fn derivatives(&self, grid: &TimeGrid, dw: &[f64], steps: std::ops::Range<usize>, eps: f64) -> Vec<f64> {
        let s = self.eval(grid, dw);
        steps.map(|_| ((s + eps) - (s - eps)) / (2.0 * eps)).collect()
    }
}

/// `F = W(T)²`.
#[derive(Debug, Clone, Copy)]
pub struct BrownianTerminalSquared;

impl PathFunctional for BrownianTerminalSquared {
    fn label(&self) -> String {
        "W(T)^2".into()
    }

    fn eval(&self, _grid: &TimeGrid, dw: &[f64]) -> f64 {
        let s: f64 = dw.iter().sum();
        s * s
    }

    fn eval_bumped(&self, _grid: &TimeGrid, dw: &[f64], _j: usize, h: f64) -> f64 {
        let s: f64 = dw.iter().sum::<f64>() + h;
        s * s
    }

    fn derivatives(&self, _grid: &TimeGrid, dw: &[f64], steps: std::ops::Range<usize>, eps: f64) -> Vec<f64> {
        let s: f64 = dw.iter().sum();
        steps
            .map(|_| ((s + eps) * (s + eps) - (s - eps) * (s - eps)) / (2.0 * eps))
            .collect()
    }
}

/// One component of `x(T)` of a delay system under an open-loop control.
#[derive(Debug, Clone)]
pub struct StateTerminal {
    pub sys: DelaySystem,
    pub u: ControlProcess,
    pub component: usize,
}

impl StateTerminal {
    pub fn new(sys: DelaySystem, u: ControlProcess, component: usize) -> Result<Self> {
        if !u.is_open_loop() {
            return Err(Error::InvalidInput("path functionals need an open-loop control".into()));
        }
        if component >= sys.dims.n {
            return Err(Error::InvalidInput(format!("component {component} out of range")));
        }
        Ok(StateTerminal { sys, u, component })
    }
}

impl PathFunctional for StateTerminal {
    fn label(&self) -> String {
        format!("x_{}(T)", self.component)
    }

    fn eval(&self, grid: &TimeGrid, dw: &[f64]) -> f64 {
        let w = match BrownianEnsemble::from_increments(*grid, 1, 0, dw.to_vec()) {
            Ok(w) => w,
            Err(_) => return f64::NAN,
        };
        match simulate(&self.sys, &self.u, &w) {
            Ok(tr) => tr.x(0, grid.n_steps)[self.component],
            Err(_) => f64::NAN,
        }
    }
}

/// Central-difference estimate of `D_r F` on every path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalliavinSample {
    pub r: f64,
    pub step: usize,
    pub functional: String,
    pub bump: f64,
    pub derivative: Vec<f64>,
}

pub fn default_bump(grid: &TimeGrid) -> f64 {
    grid.dt.sqrt() / 10.0
}

fn step_of(grid: &TimeGrid, r: f64) -> Result<usize> {
    let x = (r - grid.t0) / grid.dt;
    let j = x.round();
    if (x - j).abs() > 1e-6 || j < 0.0 || j as usize >= grid.n_steps {
        return Err(Error::InvalidInput(format!("r = {r} is not a grid time before T")));
    }
    Ok(j as usize)
}

/// `[F(ΔW_j + ε) − F(ΔW_j − ε)] / 2ε` with `t_j = r`; the partial derivative in the increment
/// on `[t_j, t_{j+1})` is the discrete Malliavin derivative for left-point schemes.
pub fn malliavin_fd(f: &dyn PathFunctional, r: f64, w: &BrownianEnsemble, eps: f64) -> Result<MalliavinSample> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("bump must be positive".into()));
    }
    let g = w.grid;
    let j = step_of(&g, r)?;
    let derivative: Vec<f64> = (0..w.n_paths)
        .into_par_iter()
        .map(|p| {
            f.derivatives(&g, w.increments(p), j..j + 1, eps)[0]
        })
        .collect();
    if let Some(p) = derivative.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "Malliavin difference quotient",
            path: p,
            step: j,
        });
    }
    Ok(MalliavinSample {
        r,
        step: j,
        functional: f.label(),
        bump: eps,
        derivative,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClarkOconeOptions {
    pub regression: RegressionOptions,
    /// Malliavin bump; `None` uses `sqrt(dt)/10`.
    pub bump: Option<f64>,
    pub sigmas: f64,
}

impl Default for ClarkOconeOptions {
    fn default() -> Self {
        ClarkOconeOptions {
            regression: RegressionOptions::default(),
            bump: None,
            sigmas: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarkOconeReport {
    pub functional: String,
    pub mean: McEstimate,
    pub variance: f64,
    pub variance_std_err: f64,
    /// `E[Σ_k ĝ_k² dt]` with `ĝ_k` the regressed `E_k[D_{t_k}F]`.
    pub isometry: McEstimate,
    pub isometry_tolerance: f64,
    /// `‖F̂ − F‖ / ‖F‖` in `L²`.
    pub relative_l2_error: f64,
    pub bump: f64,
}

impl ClarkOconeReport {
    pub fn isometry_gap(&self) -> f64 {
        (self.isometry.mean - self.variance).abs()
    }

    pub fn isometry_passed(&self) -> bool {
        self.isometry_gap() <= self.isometry_tolerance
    }
}

/// Rebuilds `F = E[F] + Σ_k E_k[D_{t_k}F] ΔW_k` from finite-difference derivatives regressed on
/// `features` (the Brownian level when `None`) and compares both sides of the isometry.
pub fn clark_ocone_check(
    f: &dyn PathFunctional,
    w: &BrownianEnsemble,
    features: Option<&Features>,
    opts: &ClarkOconeOptions,
) -> Result<ClarkOconeReport> {
    let g = w.grid;
    let np = w.n_paths;
    let nn = g.n_steps;
    let eps = opts.bump.unwrap_or_else(|| default_bump(&g));
    let own;
    let feats = match features {
        Some(f) => f,
        None => {
            own = Features::brownian(w);
            &own
        }
    };
    let values: Vec<f64> = (0..np).into_par_iter().map(|p| f.eval(&g, w.increments(p))).collect();
    let mut recon = vec![mean_var(&values).0; np];
    let mut iso = vec![0.0; np];
    const CHUNK: usize = 64;
    for start in (0..nn).step_by(CHUNK) {
        let steps = start..(start + CHUNK).min(nn);
        let width = steps.len();
        let block: Vec<f64> = (0..np)
            .into_par_iter()
            .flat_map_iter(|p| f.derivatives(&g, w.increments(p), steps.clone(), eps))
            .collect();
        if let Some(i) = block.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "Malliavin difference quotient",
                path: i / width,
                step: start + i % width,
            });
        }
        for (off, k) in steps.enumerate() {
            let d: Vec<f64> = (0..np).map(|p| block[p * width + off]).collect();
            let mut reg = LazyRegression::new(feats, k, opts.regression);
            let gk = reg.project(&d)?;
            for p in 0..np {
                recon[p] += gk[p] * w.dw(p, k);
                iso[p] += gk[p] * gk[p] * g.dt;
            }
        }
    }
    let (mf, vf) = mean_var(&values);
    let err2 = recon.iter().zip(&values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / np as f64;
    let norm2 = values.iter().map(|v| v * v).sum::<f64>() / np as f64;
    let isometry = McEstimate::from_samples(&iso, w.seed);
    let vse = variance_std_err(&values);
    Ok(ClarkOconeReport {
        functional: f.label(),
        mean: McEstimate {
            mean: mf,
            std_err: (vf / np as f64).sqrt(),
            n_paths: np,
            seed: w.seed,
        },
        variance: vf,
        variance_std_err: vse,
        isometry,
        isometry_tolerance: opts.sigmas * (isometry.std_err.powi(2) + vse * vse).sqrt(),
        relative_l2_error: if norm2 > 0.0 { (err2 / norm2).sqrt() } else { err2.sqrt() },
        bump: eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_rng::{make_grid, sample_brownian};
    use crate::sdde_forward::{Arg, Dims, InitialPath, LinearCoefficients, VectorCoefficient};

    #[test]
    fn brownian_terminal_has_unit_derivative() {
        let g = make_grid(0.0, 1.0, 50, 0.0).unwrap();
        let w = sample_brownian(g, 100, 1).unwrap();
        let s = malliavin_fd(&BrownianTerminal, 0.3, &w, default_bump(&g)).unwrap();
        assert_eq!(s.step, 15);
        assert!(s.derivative.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn squared_terminal_derivative_is_twice_terminal() {
        let g = make_grid(0.0, 1.0, 50, 0.0).unwrap();
        let w = sample_brownian(g, 100, 2).unwrap();
        let s = malliavin_fd(&BrownianTerminalSquared, 0.5, &w, 0.01).unwrap();
        for p in 0..100 {
            assert!((s.derivative[p] - 2.0 * w.terminal_value(p)).abs() < 1e-9);
        }
    }

    #[test]
    fn geometric_brownian_motion_derivative() {
        let g = make_grid(0.0, 1.0, 400, 0.0).unwrap();
        let dims = Dims::new(1, 1);
        let mut sys = crate::sdde_forward::DelaySystem::zero(g, dims);
        sys.diffusion = VectorCoefficient::Linear(LinearCoefficients::zeros(dims).with(dims, Arg::X, 0.3));
        sys.xi = InitialPath::constant(1.0);
        let f = StateTerminal::new(sys, ControlProcess::zero(&g, 1), 0).unwrap();
        let w = sample_brownian(g, 200, 3).unwrap();
        let s = malliavin_fd(&f, 0.5, &w, default_bump(&g)).unwrap();
        for p in 0..200 {
            let xt = f.eval(&g, w.increments(p));
            assert!((s.derivative[p] - 0.3 * xt).abs() < 0.05 * xt.abs(), "{} vs {}", s.derivative[p], 0.3 * xt);
        }
    }

    #[test]
    fn rejects_off_grid_times_and_bad_bumps() {
        let g = make_grid(0.0, 1.0, 10, 0.0).unwrap();
        let w = sample_brownian(g, 5, 1).unwrap();
        assert!(malliavin_fd(&BrownianTerminal, 0.05, &w, 0.1).is_err());
        assert!(malliavin_fd(&BrownianTerminal, 1.0, &w, 0.1).is_err());
        assert!(malliavin_fd(&BrownianTerminal, 0.1, &w, 0.0).is_err());
    }

    #[test]
    fn clark_ocone_on_brownian_functionals() {
        let g = make_grid(0.0, 1.0, 1000, 0.0).unwrap();
        let w = sample_brownian(g, 10_000, 4).unwrap();
        let r = clark_ocone_check(&BrownianTerminal, &w, None, &ClarkOconeOptions::default()).unwrap();
        assert!(r.relative_l2_error < 0.05);
        assert!((r.isometry.mean - 1.0).abs() < 1e-12);
        assert!(r.isometry_passed());
        let r = clark_ocone_check(&BrownianTerminalSquared, &w, None, &ClarkOconeOptions::default()).unwrap();
        assert!(r.relative_l2_error < 0.05, "{}", r.relative_l2_error);
        assert!(r.isometry_passed(), "{r:?}");
    }
}
