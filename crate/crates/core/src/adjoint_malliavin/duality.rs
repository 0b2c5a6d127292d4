use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bsvie::solve_bsvie_linear;
use super::problem::{AdjointOptions, AdjointProblem, AdjointSolution};
use crate::error::{Error, Result};
use crate::grid_rng::{BrownianEnsemble, TimeGrid};
use crate::kernels::{build_e1, build_e2, KernelSpec};
use crate::sdde_forward::{
    Arg, ControlProcess, DelaySystem, Dims, InitialPath, LinearCoefficients, QuadraticForm, ScalarCoefficient,
    VectorCoefficient,
};
use crate::stats::McEstimate;
use crate::svie_variation::{assemble_svie, simulate_svie, SvieSystem, VariationalSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    /// `E[⟨ℍ, X(T)⟩ + Σ 𝕃 X dt]`.
    pub lhs: McEstimate,
    /// `E[⟨ℍ, φ(T)⟩ + Σ ⟨φ, Y⟩ dt]` with `φ` the forcing part of the SVIE.
    pub rhs: McEstimate,
    /// Standard error of the paired difference.
    pub diff_std_err: f64,
    pub tolerance: f64,
}

impl DualityReport {
    pub fn gap(&self) -> f64 {
        (self.lhs.mean - self.rhs.mean).abs()
    }

    pub fn passed(&self) -> bool {
        self.gap() <= self.tolerance
    }
}

/// Monte Carlo check of `E[⟨ℍ, X(T)⟩] + E∫𝕃X dt = E[⟨ℍ, φ(T)⟩] + E∫⟨φ, Y⟩dt`.
///
/// Tolerance: `sigmas·sqrt(se_L² + se_R²) + budget·sqrt(dt)·max(|LHS|, |RHS|)`.
pub fn duality_check(
    svie: &SvieSystem,
    adj: &AdjointSolution,
    w: &BrownianEnsemble,
    sigmas: f64,
    budget: f64,
) -> Result<DualityReport> {
    if !svie.vs.base.psi1.is_zero() {
        return Err(Error::UnsupportedRegime("the duality check needs psi1 = 0".into()));
    }
    let g = svie.grid;
    if adj.svie != svie.options || adj.grid.n_steps != g.n_steps || adj.n_paths != w.n_paths || adj.n != svie.n {
        return Err(Error::InvalidInput("adjoint and SVIE were built differently".into()));
    }
    let x = simulate_svie(svie, w)?;
    let n = svie.n;
    let sl = 4 * n;
    let nn = g.n_steps;
    let dt = g.dt;
    let lin = &svie.vs.lin;
    let f = &svie.forcing;
    let sides: Vec<(f64, f64)> = (0..w.n_paths)
        .into_par_iter()
        .map(|p| {
            let h = lin.terminal_grad.at(p, 0);
            let mut lhs: f64 = h.iter().zip(x.at(p, nn)).map(|(a, b)| a * b).sum();
            for k in 0..nn {
                let l = &lin.running_grad.at(p, k)[..sl];
                lhs += l.iter().zip(x.at(p, k)).map(|(a, b)| a * b).sum::<f64>() * dt;
            }
            let incr: Vec<Vec<f64>> = (0..nn)
                .map(|j| {
                    let (b, s) = (f.drift.at(p, j), f.diffusion.at(p, j));
                    (0..n).map(|i| b[i] * dt + s[i] * w.dw(p, j)).collect()
                })
                .collect();
            let phi = |k: usize| -> Vec<f64> {
                let mut out = vec![0.0; sl];
                for (j, fj) in incr.iter().enumerate().take(k) {
                    for row in 0..3 {
                        let s = svie.scaling_block(row, p, k, j);
                        for r in 0..n {
                            out[row * n + r] += (0..n).map(|c| s[r * n + c] * fj[c]).sum::<f64>();
                        }
                    }
                }
                out
            };
            let mut rhs: f64 = h.iter().zip(phi(nn)).map(|(a, b)| a * b).sum();
            for k in 0..nn {
                rhs += adj.y(p, k).iter().zip(phi(k)).map(|(a, b)| a * b).sum::<f64>() * dt;
            }
            (lhs, rhs)
        })
        .collect();
    let l: Vec<f64> = sides.iter().map(|s| s.0).collect();
    let r: Vec<f64> = sides.iter().map(|s| s.1).collect();
    let d: Vec<f64> = sides.iter().map(|s| s.0 - s.1).collect();
    let lhs = McEstimate::from_samples(&l, w.seed);
    let rhs = McEstimate::from_samples(&r, w.seed);
    let diff = McEstimate::from_samples(&d, w.seed);
    let tolerance = sigmas * (lhs.std_err.powi(2) + rhs.std_err.powi(2)).sqrt()
        + budget * dt.sqrt() * lhs.mean.abs().max(rhs.mean.abs());
    Ok(DualityReport {
        lhs,
        rhs,
        diff_std_err: diff.std_err,
        tolerance,
    })
}

/// Linearizes `sys` at `u_star`, solves the adjoint by the Volterra route and checks the duality
/// identity for the variational equation driven by `v`.
pub fn duality_experiment(
    sys: &DelaySystem,
    u_star: &ControlProcess,
    v: &ControlProcess,
    w: &BrownianEnsemble,
    options: AdjointOptions,
    sigmas: f64,
    budget: f64,
) -> Result<DualityReport> {
    let prob = AdjointProblem::new(sys, u_star, w, options)?;
    let adj = solve_bsvie_linear(&prob)?;
    let vs = VariationalSystem::new(sys.clone(), prob.lin.clone(), v.clone())?;
    let n = sys.dims.n;
    let svie = assemble_svie(&vs, build_e1(&sys.phi1, &sys.grid, n), build_e2(&sys.psi1, w, n), options.svie)?;
    duality_check(&svie, &adj, w, sigmas, budget)
}

/// A seeded scalar linear-quadratic instance without noisy state memory, with a candidate
/// control and a perturbation direction.
pub fn random_linear_instance(grid: TimeGrid, seed: u64) -> Result<(DelaySystem, ControlProcess, ControlProcess)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let dims = Dims::new(1, 1);
    let mut sys = DelaySystem::zero(grid, dims);
    sys.drift = VectorCoefficient::Linear(
        LinearCoefficients::zeros(dims)
            .with(dims, Arg::X, draw(-0.5, 0.5))
            .with(dims, Arg::Y, draw(-0.4, 0.4))
            .with(dims, Arg::Z, draw(-0.3, 0.3))
            .with(dims, Arg::U, draw(0.5, 1.5))
            .with(dims, Arg::Mu, draw(-0.5, 0.5))
            .with(dims, Arg::Nu, draw(-0.5, 0.5))
            .with(dims, Arg::Lambda, draw(-0.3, 0.3)),
    );
    sys.diffusion = VectorCoefficient::Linear(
        LinearCoefficients::zeros(dims)
            .with(dims, Arg::X, draw(0.0, 0.4))
            .with(dims, Arg::Y, draw(-0.2, 0.2))
            .with(dims, Arg::U, draw(-0.3, 0.3)),
    );
    sys.phi1 = KernelSpec::exponential(draw(0.0, 0.6), draw(-1.0, 0.0));
    sys.phi2 = KernelSpec::constant(draw(0.0, 1.0));
    sys.psi2 = KernelSpec::constant(draw(0.0, 0.5));
    let mut l = QuadraticForm::zeros(dims.args_len());
    l.weights[(0, 0)] = draw(0.0, 1.0);
    l.weights[(dims.offset(Arg::U), dims.offset(Arg::U))] = draw(0.5, 1.5);
    l.linear[0] = draw(-0.2, 0.2);
    sys.running_cost = ScalarCoefficient::Quadratic(l);
    let mut h = QuadraticForm::zeros(dims.state_len());
    h.weights[(0, 0)] = draw(0.0, 1.0);
    h.linear[0] = draw(-0.3, 0.3);
    h.linear[dims.offset(Arg::Y)] = draw(-0.3, 0.3);
    sys.terminal_cost = ScalarCoefficient::Quadratic(h);
    sys.xi = InitialPath::constant(draw(0.5, 1.5));
    let (a, b, c, d) = (draw(-1.0, 1.0), draw(-1.0, 1.0), draw(0.5, 1.5), draw(-0.5, 0.5));
    let u = ControlProcess::from_fn(&grid, |t| a + b * t);
    let v = ControlProcess::from_fn(&grid, |t| c + d * (std::f64::consts::PI * t).cos());
    sys.validate()?;
    Ok((sys, u, v))
}
