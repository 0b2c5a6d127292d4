//! Cost functional, directional derivatives and the first-order optimality test.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_rng::BrownianEnsemble;
use crate::sdde_forward::{simulate, ControlProcess, DelaySystem, Orientation, Trajectories};
use crate::stats::McEstimate;
use crate::svie_variation::{linearize, simulate_variational, VariationalSystem};

/// Per-path `Σ_k l(t_k, args_k)·dt + h(x_N, y_N, z_N, κ_N)`.
pub fn cost_samples(sys: &DelaySystem, traj: &Trajectories) -> Result<Vec<f64>> {
    let g = sys.grid;
    let len = sys.dims.args_len();
    let sl = sys.dims.state_len();
    let out: Vec<f64> = (0..traj.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut a = vec![0.0; len];
            let mut running = 0.0;
            if !sys.running_cost.is_zero() {
                for k in 0..g.n_steps {
                    traj.args(p, k, &mut a);
                    running += sys.running_cost.eval(g.t(k), &a) * g.dt;
                }
            }
            let mut s = vec![0.0; sl];
            traj.state_args(p, g.n_steps, &mut s);
            running + sys.terminal_cost.eval(g.t_end, &s)
        })
        .collect();
    if let Some(p) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "cost evaluation",
            path: p,
            step: g.n_steps,
        });
    }
    Ok(out)
}

/// Monte Carlo estimate of the cost functional.
pub fn evaluate_cost(sys: &DelaySystem, u: &ControlProcess, w: &BrownianEnsemble) -> Result<McEstimate> {
    let tr = simulate(sys, u, w)?;
    Ok(McEstimate::from_samples(&cost_samples(sys, &tr)?, w.seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum GateauxMode {
    /// Cost gradients along the candidate paired with the variational response.
    AnalyticVariational,
    /// `[J(u + ρv) − J(u)]/ρ` on common noise, optionally Richardson-combined with `ρ/2`.
    FiniteDifference { rho: f64, richardson: bool },
}

impl GateauxMode {
    pub fn finite_difference() -> Self {
        GateauxMode::FiniteDifference {
            rho: 1e-2,
            richardson: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateauxEstimate {
    pub value: f64,
    pub std_err: f64,
    pub mode: GateauxMode,
    /// Smallest perturbation size entering the estimate (zero for the analytic mode).
    pub rho_used: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Directional derivative of the cost at `u_star` along `v`.
pub fn gateaux(
    sys: &DelaySystem,
    u_star: &ControlProcess,
    v: &ControlProcess,
    w: &BrownianEnsemble,
    mode: GateauxMode,
) -> Result<GateauxEstimate> {
    let (samples, rho_used) = match mode {
        GateauxMode::AnalyticVariational => (analytic_samples(sys, u_star, v, w)?, 0.0),
        GateauxMode::FiniteDifference { rho, richardson } => {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::InvalidInput(format!("finite-difference step {rho} must be positive")));
            }
            let base = cost_samples(sys, &simulate(sys, u_star, w)?)?;
            let quotient = |r: f64| -> Result<Vec<f64>> {
                let pert = cost_samples(sys, &simulate(sys, &u_star.plus_scaled(v, r)?, w)?)?;
                Ok(pert.iter().zip(&base).map(|(a, b)| (a - b) / r).collect())
            };
            let d1 = quotient(rho)?;
            if richardson {
                let d2 = quotient(0.5 * rho)?;
                (d1.iter().zip(&d2).map(|(a, b)| 2.0 * b - a).collect(), 0.5 * rho)
            } else {
                (d1, rho)
            }
        }
    };
    let est = McEstimate::from_samples(&samples, w.seed);
    if !est.mean.is_finite() {
        return Err(Error::NonFinite {
            context: "directional derivative",
            path: 0,
            step: 0,
        });
    }
    Ok(GateauxEstimate {
        value: est.mean,
        std_err: est.std_err,
        mode,
        rho_used,
        n_paths: est.n_paths,
        seed: w.seed,
    })
}

/// Per-path `Σ_k ∇l·(x̂, ŷ, ẑ, κ̂, v, v_μ, v_ν, v_λ)_k dt + ∇h·(x̂, ŷ, ẑ, κ̂)_N`.
fn analytic_samples(
    sys: &DelaySystem,
    u_star: &ControlProcess,
    v: &ControlProcess,
    w: &BrownianEnsemble,
) -> Result<Vec<f64>> {
    if v.is_zero() {
        return Ok(vec![0.0; w.n_paths]);
    }
    let base = simulate(sys, u_star, w)?;
    let lin = Arc::new(linearize(sys, &base)?);
    let vs = VariationalSystem::new(sys.clone(), lin.clone(), v.clone())?;
    let xh = simulate_variational(&vs, w)?;
    let g = sys.grid;
    let len = sys.dims.args_len();
    let sl = sys.dims.state_len();
    Ok((0..w.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut a = vec![0.0; len];
            let mut s = 0.0;
            for k in 0..g.n_steps {
                xh.args(p, k, &mut a);
                let gl = lin.running_grad.at(p, k);
                s += gl.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>() * g.dt;
            }
            let mut st = vec![0.0; sl];
            xh.state_args(p, g.n_steps, &mut st);
            s + lin.terminal_grad.at(p, 0).iter().zip(&st).map(|(x, y)| x * y).sum::<f64>()
        })
        .collect())
}

/// Allowance for the discretization bias of a first-order test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BiasBudget {
    Absolute { value: f64 },
    /// `factor · dt · E Σ_k |v_k| dt`: first-order error of the grid optimum against a
    /// continuous-time candidate.
    StepScaled { factor: f64 },
}

impl Default for BiasBudget {
    fn default() -> Self {
        BiasBudget::StepScaled { factor: 2.0 }
    }
}

impl BiasBudget {
    pub fn amount(&self, v: &ControlProcess, w: &BrownianEnsemble) -> f64 {
        match *self {
            BiasBudget::Absolute { value } => value,
            BiasBudget::StepScaled { factor } => {
                let g = w.grid;
                let total: f64 = (0..w.n_paths)
                    .map(|p| {
                        (0..g.n_steps)
                            .map(|k| v.at(p, k).iter().map(|x| x.abs()).sum::<f64>() * g.dt)
                            .sum::<f64>()
                    })
                    .sum();
                factor * g.dt * total / w.n_paths as f64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViOptions {
    pub mode: GateauxMode,
    pub sigmas: f64,
    pub bias: BiasBudget,
}

impl Default for ViOptions {
    fn default() -> Self {
        ViOptions {
            mode: GateauxMode::AnalyticVariational,
            sigmas: 3.0,
            bias: BiasBudget::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViEntry {
    pub direction: usize,
    pub gateaux: GateauxEstimate,
    /// Rate of improvement along the direction (positive means the candidate can be beaten).
    pub improvement: f64,
    pub tolerance: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViReport {
    pub orientation: Orientation,
    pub entries: Vec<ViEntry>,
    pub violations: Vec<usize>,
}

impl ViReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// First-order optimality along each direction, read against the orientation of `sys`:
/// a maximizer needs `dJ ≤ tol`, a minimizer `−dJ ≤ tol`.
pub fn variational_inequality_check(
    sys: &DelaySystem,
    u_star: &ControlProcess,
    directions: &[ControlProcess],
    w: &BrownianEnsemble,
    options: ViOptions,
) -> Result<ViReport> {
    let mut entries = Vec::with_capacity(directions.len());
    for (i, v) in directions.iter().enumerate() {
        let ge = gateaux(sys, u_star, v, w, options.mode)?;
        let improvement = -sys.orientation.sign() * ge.value;
        let tolerance = options.sigmas * ge.std_err + options.bias.amount(v, w);
        entries.push(ViEntry {
            direction: i,
            gateaux: ge,
            improvement,
            tolerance,
            violation: improvement > tolerance,
        });
    }
    let violations = entries.iter().filter(|e| e.violation).map(|e| e.direction).collect();
    Ok(ViReport {
        orientation: sys.orientation,
        entries,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub rhos: Vec<f64>,
    pub costs: Vec<McEstimate>,
    /// Coefficients of `J(u + ρv) ≈ c0 + c1ρ + c2ρ² + c3ρ³`.
    pub coefficients: [f64; 4],
    pub cubic_std_err: f64,
    pub cubic_small: bool,
    pub curvature_consistent: bool,
}

impl ConvexityReport {
    pub fn passed(&self) -> bool {
        self.cubic_small && self.curvature_consistent
    }
}

/// Fits a cubic to `ρ ↦ J(u + ρv)` on common noise. The cubic coefficient must vanish within
/// `sigmas` standard errors (plus a round-off floor) and the curvature must open in the
/// direction the orientation prefers.
pub fn convexity_probe(
    sys: &DelaySystem,
    u: &ControlProcess,
    v: &ControlProcess,
    rhos: &[f64],
    w: &BrownianEnsemble,
    sigmas: f64,
) -> Result<ConvexityReport> {
    if rhos.len() < 4 {
        return Err(Error::InvalidInput("a cubic fit needs at least four perturbation sizes".into()));
    }
    let per_rho: Vec<Vec<f64>> = rhos
        .iter()
        .map(|&r| cost_samples(sys, &simulate(sys, &u.plus_scaled(v, r)?, w)?))
        .collect::<Result<_>>()?;
    let vander = DMatrix::from_fn(rhos.len(), 4, |i, j| rhos[i].powi(j as i32));
    let pinv = vander
        .clone()
        .pseudo_inverse(1e-14)
        .map_err(|e| Error::InvalidInput(format!("cubic fit: {e}")))?;
    let fit = |ys: &[f64]| -> [f64; 4] {
        let c = &pinv * DVector::from_column_slice(ys);
        [c[0], c[1], c[2], c[3]]
    };
    let path_cubic: Vec<f64> = (0..w.n_paths)
        .map(|p| fit(&per_rho.iter().map(|s| s[p]).collect::<Vec<_>>())[3])
        .collect();
    let costs: Vec<McEstimate> = per_rho.iter().map(|s| McEstimate::from_samples(s, w.seed)).collect();
    let coefficients = fit(&costs.iter().map(|c| c.mean).collect::<Vec<_>>());
    let cubic = McEstimate::from_samples(&path_cubic, w.seed);
    let floor = 1e-8 * (1.0 + coefficients[2].abs());
    Ok(ConvexityReport {
        rhos: rhos.to_vec(),
        costs,
        coefficients,
        cubic_std_err: cubic.std_err,
        cubic_small: coefficients[3].abs() <= sigmas * cubic.std_err + floor,
        curvature_consistent: sys.orientation.sign() * coefficients[2] > 0.0,
    })
}
