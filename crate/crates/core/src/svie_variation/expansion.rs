use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::linearize::linearize;
use super::variational::{simulate_variational, VariationalSystem};
use crate::error::{Error, Result};
use crate::grid_rng::BrownianEnsemble;
use crate::sdde_forward::{simulate, ControlProcess, DelaySystem};
use crate::stats::McEstimate;

/// Monte Carlo estimate of `E sup_k |(x^ρ − x*)/ρ − x̂|²` over grid points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionGap {
    pub rho: f64,
    pub gap: f64,
    pub std_err: f64,
}

pub fn expansion_gap(
    sys: &DelaySystem,
    u_star: &ControlProcess,
    v: &ControlProcess,
    rho_list: &[f64],
    w: &BrownianEnsemble,
) -> Result<Vec<ExpansionGap>> {
    if let Some(r) = rho_list.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::InvalidInput(format!("perturbation size {r} outside (0, 1]")));
    }
    let base = simulate(sys, u_star, w)?;
    let lin = linearize(sys, &base)?;
    let vs = VariationalSystem::new(sys.clone(), Arc::new(lin), v.clone())?;
    let xh = simulate_variational(&vs, w)?;
    let nt = sys.grid.n_steps + 1;
    let nd = sys.dims.n;
    rho_list
        .iter()
        .map(|&rho| {
            let pert = simulate(sys, &u_star.plus_scaled(v, rho)?, w)?;
            let sups: Vec<f64> = (0..w.n_paths)
                .map(|p| {
                    (0..nt)
                        .map(|k| {
                            (0..nd)
                                .map(|i| {
                                    let o = (p * nt + k) * nd + i;
                                    let e = (pert.x[o] - base.x[o]) / rho - xh.x[o];
                                    e * e
                                })
                                .sum::<f64>()
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            let est = McEstimate::from_samples(&sups, w.seed);
            Ok(ExpansionGap {
                rho,
                gap: est.mean,
                std_err: est.std_err,
            })
        })
        .collect()
}
