use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linearize::linearize;
use super::svie::{assemble_svie, simulate_svie, SvieOptions};
use super::variational::{simulate_variational, VariationalSystem};
use crate::error::{Error, Result};
use crate::grid_rng::{BrownianEnsemble, TimeGrid};
use crate::kernels::{build_e1, build_e2};
use crate::sdde_forward::{simulate, ControlProcess, DelaySystem};
use crate::stats::{fitted_order, mean_var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceLevel {
    pub n_steps: usize,
    pub dt: f64,
    /// `(E max_k |X¹(t_k) − x̂(t_k)|²)^{1/2}` against the reference.
    pub discrepancy: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub reference_steps: usize,
    pub levels: Vec<EquivalenceLevel>,
    /// Least-squares slope of `log discrepancy` against `log dt`.
    pub fitted_order: f64,
}

impl EquivalenceReport {
    pub fn strictly_decreasing(&self) -> bool {
        let mut by_dt = self.levels.clone();
        by_dt.sort_by(|a, b| b.dt.total_cmp(&a.dt));
        by_dt.windows(2).all(|w| w[1].discrepancy < w[0].discrepancy)
    }
}

fn subsample(u: &ControlProcess, grid: &TimeGrid, factor: usize) -> Result<ControlProcess> {
    if !u.is_open_loop() {
        return Err(Error::InvalidInput("refinement study needs open-loop controls".into()));
    }
    ControlProcess::open_loop(grid, u.m, |k, _| u.at(0, k * factor).to_vec())
}

/// Solves the Volterra form of the variational equation on grids `factor` times coarser than
/// the fine grid of `w` and compares its first block with the variational SDDE solved on the
/// fine grid, path by path on the same Brownian motion.
///
/// `sys`, `u_star` and `v` live on the fine grid; controls are read at the coarse nodes.
pub fn equivalence_study(
    sys: &DelaySystem,
    u_star: &ControlProcess,
    v: &ControlProcess,
    w: &BrownianEnsemble,
    factors: &[usize],
    options: SvieOptions,
) -> Result<EquivalenceReport> {
    if factors.len() < 2 || factors.iter().any(|f| *f < 2) {
        return Err(Error::InvalidInput("need at least two coarsening factors, each at least 2".into()));
    }
    let base = simulate(sys, u_star, w)?;
    let vs = VariationalSystem::new(sys.clone(), Arc::new(linearize(sys, &base)?), v.clone())?;
    let reference = simulate_variational(&vs, w)?;
    let n = sys.dims.n;
    let np = w.n_paths;
    let mut levels = Vec::with_capacity(factors.len());
    for &factor in factors {
        let wc = w.coarsened(factor)?;
        let g = wc.grid;
        let sc = sys.on_grid(g);
        let uc = subsample(u_star, &g, factor)?;
        let vc = subsample(v, &g, factor)?;
        let tr = simulate(&sc, &uc, &wc)?;
        let vsc = VariationalSystem::new(sc.clone(), Arc::new(linearize(&sc, &tr)?), vc)?;
        let svie = assemble_svie(&vsc, build_e1(&sc.phi1, &g, n), build_e2(&sc.psi1, &wc, n), options)?;
        let x = simulate_svie(&svie, &wc)?;
        let sq: Vec<f64> = (0..np)
            .into_par_iter()
            .map(|p| {
                (0..=g.n_steps)
                    .map(|k| {
                        let a = x.component(0, p, k);
                        let b = reference.x(p, k * factor);
                        a.iter().zip(b).map(|(s, t)| (s - t) * (s - t)).sum::<f64>()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let (m, var) = mean_var(&sq);
        let discrepancy = m.sqrt();
        let std_err = if discrepancy > 0.0 {
            (var / np as f64).sqrt() / (2.0 * discrepancy)
        } else {
            0.0
        };
        levels.push(EquivalenceLevel {
            n_steps: g.n_steps,
            dt: g.dt,
            discrepancy,
            std_err,
        });
    }
    let dts: Vec<f64> = levels.iter().map(|l| l.dt).collect();
    let errs: Vec<f64> = levels.iter().map(|l| l.discrepancy).collect();
    Ok(EquivalenceReport {
        reference_steps: sys.grid.n_steps,
        fitted_order: fitted_order(&dts, &errs),
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_rng::{make_grid, sample_brownian};
    use crate::kernels::KernelSpec;
    use crate::sdde_forward::{Arg, Dims, InitialPath, LinearCoefficients, VectorCoefficient};

    #[test]
    fn refinement_order_is_one_half() {
        let g = make_grid(0.0, 1.0, 800, 0.1).unwrap();
        let dims = Dims::new(1, 1);
        let mut sys = DelaySystem::zero(g, dims);
        let b = LinearCoefficients::zeros(dims)
            .with(dims, Arg::X, -0.5)
            .with(dims, Arg::Y, 0.4)
            .with(dims, Arg::Z, 0.3)
            .with(dims, Arg::U, 1.0);
        let s = LinearCoefficients::zeros(dims)
            .with(dims, Arg::X, 0.4)
            .with(dims, Arg::Kappa, 0.3)
            .with(dims, Arg::U, 0.3);
        sys.drift = VectorCoefficient::Linear(b);
        sys.diffusion = VectorCoefficient::Linear(s);
        sys.phi1 = KernelSpec::constant(0.7);
        sys.psi1 = KernelSpec::constant(0.6);
        sys.xi = InitialPath::constant(1.0);
        let w = sample_brownian(g, 1000, 3).unwrap();
        let u = ControlProcess::from_fn(&g, |t| t.sin());
        let v = ControlProcess::from_fn(&g, |t| 1.0 + t);
        let rep = equivalence_study(&sys, &u, &v, &w, &[16, 8, 4], SvieOptions::default()).unwrap();
        assert!(rep.strictly_decreasing(), "{rep:?}");
        assert!((0.3..=0.7).contains(&rep.fitted_order), "{rep:?}");
    }

    #[test]
    fn rejects_single_level() {
        let g = make_grid(0.0, 1.0, 40, 0.1).unwrap();
        let sys = DelaySystem::zero(g, Dims::new(1, 1));
        let w = sample_brownian(g, 2, 1).unwrap();
        let u = ControlProcess::zero(&g, 1);
        assert!(equivalence_study(&sys, &u, &u, &w, &[2], SvieOptions::default()).is_err());
    }
}
