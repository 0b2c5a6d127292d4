use std::sync::Arc;

use rayon::prelude::*;

use super::linearize::{Linearization, PathField};
use crate::error::{Error, Result};
use crate::grid_rng::BrownianEnsemble;
use crate::sdde_forward::{
    run_forward, Arg, Coefficients, ControlProcess, DelaySystem, ForwardParts, InitialPath, Trajectories,
};

/// The variational equation: the system linearized along a candidate pair, driven by a
/// control perturbation `v` with zero initial paths.
#[derive(Debug, Clone)]
pub struct VariationalSystem {
    pub base: DelaySystem,
    pub lin: Arc<Linearization>,
    pub v: ControlProcess,
}

impl VariationalSystem {
    pub fn new(base: DelaySystem, lin: Arc<Linearization>, v: ControlProcess) -> Result<Self> {
        if v.m != base.dims.m || v.n_steps != base.grid.n_steps {
            return Err(Error::InvalidInput("perturbation does not match the system".into()));
        }
        Ok(VariationalSystem { base, lin, v })
    }
}

struct JacobianDynamics<'a>(&'a Linearization);

impl Coefficients for JacobianDynamics<'_> {
    fn eval(&self, path: usize, k: usize, _t: f64, args: &[f64], drift: &mut [f64], diffusion: &mut [f64]) {
        let len = args.len();
        let jb = self.0.drift_jac.at(path, k);
        let js = self.0.diffusion_jac.at(path, k);
        for i in 0..drift.len() {
            let (mut b, mut s) = (0.0, 0.0);
            for c in 0..len {
                b += jb[i * len + c] * args[c];
                s += js[i * len + c] * args[c];
            }
            drift[i] = b;
            diffusion[i] = s;
        }
    }
}

/// Euler–Maruyama on the variational equation, memory terms of `x̂` and `v` included.
pub fn simulate_variational(vs: &VariationalSystem, w: &BrownianEnsemble) -> Result<Trajectories> {
    let sys = &vs.base;
    let xi = InitialPath::zeros(sys.dims.n);
    let vs0 = InitialPath::zeros(sys.dims.m);
    let parts = ForwardParts {
        xi: &xi,
        varsigma: &vs0,
        ..ForwardParts::of(sys)
    };
    run_forward(&parts, &JacobianDynamics(&vs.lin), &vs.v, w)
}

/// Control-perturbation forcing along each path:
/// `Ξ_b = b_u v + b_μ v(t−δ) + b_ν ∫φ2 v + b_λ ∫ψ2 v dW`, likewise `Ξ_σ` and `Ξ_l`.
#[derive(Debug, Clone)]
pub struct Forcing {
    pub drift: PathField,
    pub diffusion: PathField,
    pub running: PathField,
}

pub fn control_forcing(vs: &VariationalSystem, w: &BrownianEnsemble) -> Forcing {
    let sys = &vs.base;
    let lin = &vs.lin;
    let dims = sys.dims;
    let g = sys.grid;
    let nt = g.n_steps + 1;
    let (nd, len) = (dims.n, dims.args_len());
    let np = w.n_paths;
    if vs.v.is_zero() {
        return Forcing {
            drift: PathField::zeros(nd, nt, np),
            diffusion: PathField::zeros(nd, nt, np),
            running: PathField::zeros(1, nt, np),
        };
    }
    let xi = InitialPath::zeros(dims.n);
    let vs0 = InitialPath::zeros(dims.m);
    let parts = ForwardParts {
        xi: &xi,
        varsigma: &vs0,
        ..ForwardParts::of(sys)
    };
    let per_path: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..np)
        .into_par_iter()
        .map(|p| {
            let mem = crate::sdde_forward::control_memories(&parts, &vs.v, p, w.increments(p));
            let mut fb = vec![0.0; nt * nd];
            let mut fs = vec![0.0; nt * nd];
            let mut fl = vec![0.0; nt];
            let mut args = vec![0.0; len];
            for k in 0..g.n_steps {
                for (slot, a) in Arg::CONTROL.iter().enumerate() {
                    args[dims.range(*a)].copy_from_slice(&mem[slot][k * dims.m..(k + 1) * dims.m]);
                }
                let jb = lin.drift_jac.at(p, k);
                let js = lin.diffusion_jac.at(p, k);
                let gl = lin.running_grad.at(p, k);
                let c0 = dims.offset(Arg::U);
                for i in 0..nd {
                    let (mut b, mut s) = (0.0, 0.0);
                    for c in c0..len {
                        b += jb[i * len + c] * args[c];
                        s += js[i * len + c] * args[c];
                    }
                    fb[k * nd + i] = b;
                    fs[k * nd + i] = s;
                }
                fl[k] = (c0..len).map(|c| gl[c] * args[c]).sum();
            }
            (fb, fs, fl)
        })
        .collect();
    let mut db = Vec::with_capacity(np * nt * nd);
    let mut ds = Vec::with_capacity(np * nt * nd);
    let mut dl = Vec::with_capacity(np * nt);
    for (b, s, l) in per_path {
        db.extend(b);
        ds.extend(s);
        dl.extend(l);
    }
    Forcing {
        drift: PathField::per_path(nd, nt, np, db),
        diffusion: PathField::per_path(nd, nt, np, ds),
        running: PathField::per_path(1, nt, np, dl),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_rng::{make_grid, sample_brownian};
    use crate::kernels::KernelSpec;
    use crate::sdde_forward::{simulate, Dims, LinearCoefficients, VectorCoefficient};
    use crate::svie_variation::linearize;

    fn linear_system() -> DelaySystem {
        let g = make_grid(0.0, 1.0, 40, 0.1).unwrap();
        let dims = Dims::new(1, 1);
        let mut sys = DelaySystem::zero(g, dims);
        let b = LinearCoefficients::zeros(dims)
            .with(dims, Arg::X, -0.4)
            .with(dims, Arg::Y, 0.3)
            .with(dims, Arg::Z, 0.2)
            .with(dims, Arg::Kappa, 0.1)
            .with(dims, Arg::U, 1.0)
            .with(dims, Arg::Mu, 0.5)
            .with(dims, Arg::Nu, 0.4)
            .with(dims, Arg::Lambda, 0.3);
        let s = LinearCoefficients::zeros(dims)
            .with(dims, Arg::X, 0.3)
            .with(dims, Arg::Y, 0.1)
            .with(dims, Arg::Kappa, 0.2)
            .with(dims, Arg::U, 0.2)
            .with(dims, Arg::Lambda, 0.1);
        sys.drift = VectorCoefficient::Linear(b);
        sys.diffusion = VectorCoefficient::Linear(s);
        sys.phi1 = KernelSpec::exponential(0.5, -1.0);
        sys.psi1 = KernelSpec::constant(0.4);
        sys.phi2 = KernelSpec::constant(1.0);
        sys.psi2 = KernelSpec::exponential(0.3, 0.2);
        sys.xi = InitialPath::constant(1.0);
        sys.varsigma = InitialPath::constant(0.2);
        sys
    }

    fn variational(sys: &DelaySystem, u: &ControlProcess, v: &ControlProcess, w: &BrownianEnsemble) -> VariationalSystem {
        let tr = simulate(sys, u, w).unwrap();
        let lin = linearize(sys, &tr).unwrap();
        VariationalSystem::new(sys.clone(), Arc::new(lin), v.clone()).unwrap()
    }

    #[test]
    fn zero_perturbation_gives_zero_response() {
        let sys = linear_system();
        let g = sys.grid;
        let w = sample_brownian(g, 20, 1).unwrap();
        let u = ControlProcess::from_fn(&g, |t| t);
        let vs = variational(&sys, &u, &ControlProcess::zero(&g, 1), &w);
        let tr = simulate_variational(&vs, &w).unwrap();
        assert!(tr.x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_response_equals_difference_quotient() {
        let sys = linear_system();
        let g = sys.grid;
        let w = sample_brownian(g, 50, 2).unwrap();
        let u = ControlProcess::from_fn(&g, |t| (2.0 * t).cos());
        let v = ControlProcess::from_fn(&g, |t| 1.0 - t * t);
        let vs = variational(&sys, &u, &v, &w);
        let xh = simulate_variational(&vs, &w).unwrap();
        let base = simulate(&sys, &u, &w).unwrap();
        for rho in [1.0, 0.3, 0.01] {
            let pert = simulate(&sys, &u.plus_scaled(&v, rho).unwrap(), &w).unwrap();
            for i in 0..base.x.len() {
                let q = (pert.x[i] - base.x[i]) / rho;
                assert!((q - xh.x[i]).abs() < 1e-9 * (1.0 + q.abs()), "rho {rho}: {q} vs {}", xh.x[i]);
            }
        }
    }

    #[test]
    fn pure_drift_integral() {
        let g = make_grid(0.5, 2.0, 30, 0.1).unwrap();
        let dims = Dims::new(1, 1);
        let mut sys = DelaySystem::zero(g, dims);
        sys.drift = VectorCoefficient::Linear(LinearCoefficients::zeros(dims).with(dims, Arg::U, 1.0));
        let w = sample_brownian(g, 5, 3).unwrap();
        let vs = variational(&sys, &ControlProcess::zero(&g, 1), &ControlProcess::constant(&g, &[1.0]), &w);
        let tr = simulate_variational(&vs, &w).unwrap();
        for p in 0..5 {
            assert!((tr.x(p, g.n_steps)[0] - 1.5).abs() < 1e-12);
        }
    }
}
