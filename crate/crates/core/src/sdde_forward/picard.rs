use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::control::ControlProcess;
use super::simulate::{assemble, check_control, control_memories, state_memories, ForwardParts, PathData, Trajectories};
use super::system::{Arg, DelaySystem};
use crate::error::{Error, Result};
use crate::grid_rng::BrownianEnsemble;

/// Constants entering the exponential weight `β = 16L²(1 + L̂ + 2L̄²T) + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardWeights {
    /// Lipschitz constant of `b` and `σ`.
    pub lipschitz: f64,
    /// Bound relating the delayed-state weighted norm to the current one.
    pub delay_bound: f64,
    /// Bound on the state kernels.
    pub kernel_bound: f64,
}

impl PicardWeights {
    /// `delay_bound = 1` and the kernel bound read off `φ1`, `ψ1`.
    pub fn for_system(sys: &DelaySystem, lipschitz: f64) -> Self {
        PicardWeights {
            lipschitz,
            delay_bound: 1.0,
            kernel_bound: sys.phi1.sup_norm(&sys.grid).max(sys.psi1.sup_norm(&sys.grid)),
        }
    }

    pub fn beta(&self, horizon: f64) -> f64 {
        let l = self.lipschitz;
        16.0 * l * l * (1.0 + self.delay_bound + 2.0 * self.kernel_bound * self.kernel_bound * horizon) + 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub beta: f64,
    /// Squared weighted gap `E Σ_k e^{−β(t_k−t0)} |X_k − x_k|² dt` per iteration.
    pub gaps: Vec<f64>,
    /// `gaps[i+1] / gaps[i]`, undefined entries (zero denominators) omitted.
    pub ratios: Vec<f64>,
    pub iterations: usize,
}

impl PicardReport {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }
}

/// Fixed-point iteration of the map that freezes every argument of `b` and `σ` at the
/// previous iterate, starting from the constant path `ξ(t0)`.
pub fn picard_solve(
    sys: &DelaySystem,
    u: &ControlProcess,
    w: &BrownianEnsemble,
    weights: PicardWeights,
    tol: f64,
    max_iter: usize,
) -> Result<(Trajectories, PicardReport)> {
    check_control(u, sys.dims, w)?;
    let parts = ForwardParts::of(sys);
    let g = sys.grid;
    let dims = sys.dims;
    let (nd, m) = (dims.n, dims.m);
    let n = g.n_steps;
    let beta = weights.beta(g.horizon());
    let weight: Vec<f64> = (0..=n).map(|k| (-beta * (g.t(k) - g.t0)).exp() * g.dt).collect();

    let controls: Vec<[Vec<f64>; 4]> = (0..w.n_paths)
        .into_par_iter()
        .map(|p| control_memories(&parts, u, p, w.increments(p)))
        .collect();
    let x0 = sys.xi.at(&g, 0).to_vec();
    let mut iterate: Vec<Vec<f64>> = vec![x0.iter().copied().cycle().take((n + 1) * nd).collect(); w.n_paths];

    let mut gaps = Vec::new();
    loop {
        if gaps.len() >= max_iter {
            return Err(Error::NoConvergence {
                iterations: gaps.len(),
                last_gap: gaps.last().copied().unwrap_or(f64::NAN),
            });
        }
        let next: Result<Vec<(Vec<f64>, f64)>> = iterate
            .par_iter()
            .enumerate()
            .map(|(p, xi)| {
                let dw = w.increments(p);
                let [y, z, ka] = state_memories(&parts, xi, dw);
                let [uu, mu, nu, la] = &controls[p];
                let mut args = vec![0.0; dims.args_len()];
                let mut b = vec![0.0; nd];
                let mut s = vec![0.0; nd];
                let mut out = vec![0.0; (n + 1) * nd];
                out[..nd].copy_from_slice(&x0);
                let mut gap = 0.0;
                for k in 0..n {
                    let r = k * nd..(k + 1) * nd;
                    let rc = k * m..(k + 1) * m;
                    args[dims.range(Arg::X)].copy_from_slice(&xi[r.clone()]);
                    args[dims.range(Arg::Y)].copy_from_slice(&y[r.clone()]);
                    args[dims.range(Arg::Z)].copy_from_slice(&z[r.clone()]);
                    args[dims.range(Arg::Kappa)].copy_from_slice(&ka[r]);
                    args[dims.range(Arg::U)].copy_from_slice(&uu[rc.clone()]);
                    args[dims.range(Arg::Mu)].copy_from_slice(&mu[rc.clone()]);
                    args[dims.range(Arg::Nu)].copy_from_slice(&nu[rc.clone()]);
                    args[dims.range(Arg::Lambda)].copy_from_slice(&la[rc]);
                    sys.drift.eval(g.t(k), &args, &mut b);
                    sys.diffusion.eval(g.t(k), &args, &mut s);
                    for i in 0..nd {
                        let v = out[k * nd + i] + b[i] * g.dt + s[i] * dw[k];
                        if !v.is_finite() {
                            return Err(Error::NonFinite {
                                context: "picard iteration",
                                path: p,
                                step: k + 1,
                            });
                        }
                        out[(k + 1) * nd + i] = v;
                        let diff = v - xi[(k + 1) * nd + i];
                        gap += weight[k + 1] * diff * diff;
                    }
                }
                Ok((out, gap))
            })
            .collect();
        let next = next?;
        let gap = next.iter().map(|(_, g)| g).sum::<f64>() / w.n_paths as f64;
        iterate = next.into_iter().map(|(x, _)| x).collect();
        gaps.push(gap);
        if gap <= tol {
            break;
        }
    }

    let ratios = gaps
        .windows(2)
        .filter(|p| p[0] > 0.0)
        .map(|p| p[1] / p[0])
        .collect();
    let paths: Vec<PathData> = iterate
        .into_par_iter()
        .enumerate()
        .map(|(p, x)| {
            let dw = w.increments(p);
            let [y, z, kappa] = state_memories(&parts, &x, dw);
            let [u, mu, nu, lambda] = controls[p].clone();
            PathData {
                x,
                y,
                z,
                kappa,
                u,
                mu,
                nu,
                lambda,
            }
        })
        .collect();
    let report = PicardReport {
        beta,
        iterations: gaps.len(),
        gaps,
        ratios,
    };
    Ok((assemble(g, dims, paths), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_rng::{make_grid, sample_brownian};
    use crate::kernels::KernelSpec;
    use crate::sdde_forward::simulate::simulate;
    use crate::sdde_forward::system::{Dims, InitialPath, LinearCoefficients, VectorCoefficient};

    #[test]
    fn zero_dynamics_converge_in_one_iteration() {
        let g = make_grid(0.0, 1.0, 20, 0.1).unwrap();
        let mut sys = DelaySystem::zero(g, Dims::new(1, 1));
        sys.xi = InitialPath::constant(1.5);
        let w = sample_brownian(g, 10, 1).unwrap();
        let (tr, rep) = picard_solve(&sys, &ControlProcess::zero(&g, 1), &w, PicardWeights::for_system(&sys, 0.1), 1e-14, 5).unwrap();
        assert_eq!(rep.iterations, 1);
        assert_eq!(rep.gaps, vec![0.0]);
        assert!(tr.x.iter().all(|v| *v == 1.5));
    }

    fn all_point_one(g: crate::grid_rng::TimeGrid) -> DelaySystem {
        let dims = Dims::new(1, 1);
        let mut lin = LinearCoefficients::zeros(dims);
        for a in Arg::ALL {
            lin = lin.with(dims, a, 0.1);
        }
        let mut sys = DelaySystem::zero(g, dims);
        sys.drift = VectorCoefficient::Linear(lin.clone());
        sys.diffusion = VectorCoefficient::Linear(lin);
        for k in [&mut sys.phi1, &mut sys.psi1, &mut sys.phi2, &mut sys.psi2] {
            *k = KernelSpec::constant(0.1);
        }
        sys.xi = InitialPath::constant(1.0);
        sys.varsigma = InitialPath::constant(0.5);
        sys
    }

    #[test]
    fn contraction_ratios_and_agreement_with_simulation() {
        let g = make_grid(0.0, 1.0, 50, 0.1).unwrap();
        let sys = all_point_one(g);
        let w = sample_brownian(g, 500, 2).unwrap();
        let u = ControlProcess::from_fn(&g, |t| 1.0 - t);
        let (tr, rep) = picard_solve(&sys, &u, &w, PicardWeights::for_system(&sys, 0.1), 1e-28, 100).unwrap();
        assert!(rep.ratios.iter().skip(1).all(|r| *r <= 0.5), "{:?}", rep.ratios);
        let direct = simulate(&sys, &u, &w).unwrap();
        let max_diff = tr.x.iter().zip(&direct.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_diff < 1e-12, "max diff {max_diff}");
    }

    #[test]
    fn iteration_cap_raises() {
        let g = make_grid(0.0, 1.0, 50, 0.1).unwrap();
        let sys = all_point_one(g);
        let w = sample_brownian(g, 20, 2).unwrap();
        let r = picard_solve(&sys, &ControlProcess::zero(&g, 1), &w, PicardWeights::for_system(&sys, 0.1), 0.0, 3);
        assert!(matches!(r, Err(Error::NoConvergence { iterations: 3, .. })));
    }
}
