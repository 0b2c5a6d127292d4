use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::problem::{hamiltonian_gradient, AdjointProblem, AdjointSolution};
use super::regression::{constant_value, LazyRegression};
use crate::error::{Error, Result};
use crate::sdde_forward::{Arg, DelaySystem};
use crate::stats::mean_var;

/// `H = l + ⟨b, p⟩ + ⟨σ, q⟩` at one argument vector, with its control partials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianEval {
    pub value: f64,
    pub du: Vec<f64>,
    pub dmu: Vec<f64>,
    pub dnu: Vec<f64>,
    pub dlambda: Vec<f64>,
}

pub fn hamiltonian(sys: &DelaySystem, t: f64, args: &[f64], p: &[f64], q: &[f64]) -> Result<HamiltonianEval> {
    let dims = sys.dims;
    let len = dims.args_len();
    if args.len() != len || p.len() != dims.n || q.len() != dims.n {
        return Err(Error::InvalidInput("hamiltonian arguments have the wrong shape".into()));
    }
    let mut b = vec![0.0; dims.n];
    let mut s = vec![0.0; dims.n];
    sys.drift.eval(t, args, &mut b);
    sys.diffusion.eval(t, args, &mut s);
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let value = sys.running_cost.eval(t, args) + dot(&b, p) + dot(&s, q);
    let mut grad = vec![0.0; len];
    sys.running_cost.gradient(t, args, &mut grad);
    let mut jb = vec![0.0; dims.n * len];
    let mut js = vec![0.0; dims.n * len];
    sys.drift.jacobian(t, args, dims.n, &mut jb);
    sys.diffusion.jacobian(t, args, dims.n, &mut js);
    for c in 0..len {
        for i in 0..dims.n {
            grad[c] += jb[i * len + c] * p[i] + js[i * len + c] * q[i];
        }
    }
    if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "hamiltonian",
            path: 0,
            step: 0,
        });
    }
    let part = |a: Arg| grad[dims.range(a)].to_vec();
    Ok(HamiltonianEval {
        value,
        du: part(Arg::U),
        dmu: part(Arg::Mu),
        dnu: part(Arg::Nu),
        dlambda: part(Arg::Lambda),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaximumOptions {
    pub sigmas: f64,
    /// Absolute discretization allowance added to the statistical band.
    pub bias: f64,
}

impl Default for MaximumOptions {
    fn default() -> Self {
        MaximumOptions { sigmas: 3.0, bias: 0.0 }
    }
}

/// Stationarity residual `G(t_k)` per grid point, summarized across paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximumReport {
    pub times: Vec<f64>,
    pub m: usize,
    /// `m` per step.
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Root mean square of `|G(t_k)|` over paths.
    pub rms: Vec<f64>,
    pub sigmas: f64,
    pub bias: f64,
}

impl MaximumReport {
    /// Largest excess of `|mean G|` over `sigmas·SE + bias`.
    pub fn worst_excess(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.std_err)
            .map(|(m, s)| m.abs() - self.sigmas * s - self.bias)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst_excess() <= 0.0
    }

    pub fn max_abs_mean(&self) -> f64 {
        self.mean.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Smallest `|mean G|` over steps with `lo < t_k < hi`.
    pub fn min_abs_mean_between(&self, lo: f64, hi: f64) -> f64 {
        self.times
            .iter()
            .enumerate()
            .filter(|(_, t)| **t > lo && **t < hi)
            .flat_map(|(k, _)| self.mean[k * self.m..(k + 1) * self.m].iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    /// `⟨mean G(t_k), u − u*(t_k)⟩` for a test point `u`; orientation-signed callers expect `≥ −tol`.
    pub fn directional(&self, k: usize, du: &[f64]) -> f64 {
        self.mean[k * self.m..(k + 1) * self.m].iter().zip(du).map(|(a, b)| a * b).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["t", "component", "mean", "std_err", "rms"])?;
        for (k, t) in self.times.iter().enumerate() {
            for c in 0..self.m {
                wr.write_record(&[
                    t.to_string(),
                    c.to_string(),
                    self.mean[k * self.m + c].to_string(),
                    self.std_err[k * self.m + c].to_string(),
                    self.rms[k].to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Evaluates `G(t_k) = H_u(t_k) + E_k[H_μ(t_k+δ)1(t_k+δ < T) + Σ_{i≥k} φ2(t_i, t_k)ᵀH_ν(t_i)dt
/// + Σ_{i>k} ψ2(t_i, t_k)ᵀ D_{t_k}H_λ(t_i) dt]` along `(x*, u*)`.
///
/// The conditional Malliavin term uses `E_k[D_{t_k}Φ] = E_k[Φ ΔW_k]/dt` and is skipped when
/// `H_λ` does not depend on the path.
pub fn maximum_condition(prob: &AdjointProblem, adj: &AdjointSolution, opts: &MaximumOptions) -> Result<MaximumReport> {
    let sys = &prob.sys;
    let g = sys.grid;
    let dims = sys.dims;
    let (m, len) = (dims.m, dims.args_len());
    let nn = g.n_steps;
    let d = g.delay_steps;
    let np = prob.w.n_paths;
    let dt = g.dt;
    if adj.n_paths != np || adj.grid.n_steps != nn {
        return Err(Error::InvalidInput("adjoint does not match the problem".into()));
    }
    let grads: Vec<f64> = (0..np)
        .into_par_iter()
        .flat_map_iter(|p| {
            let mut out = vec![0.0; nn * len];
            for k in 0..nn {
                hamiltonian_gradient(&prob.lin, p, k, adj.p(p, k), adj.q(p, k), &mut out[k * len..(k + 1) * len]);
            }
            out
        })
        .collect();
    let part = |p: usize, k: usize, a: Arg| &grads[(p * nn + k) * len..(p * nn + k + 1) * len][dims.range(a)];
    let kernel_blocks = |kern: &crate::kernels::KernelSpec, k: usize, from: usize| -> Vec<Vec<f64>> {
        (from..nn)
            .map(|i| {
                let mut b = vec![0.0; m * m];
                kern.eval_grid_into(&g, m, i, k, &mut b);
                b
            })
            .collect()
    };
    let mut mean = vec![0.0; nn * m];
    let mut std_err = vec![0.0; nn * m];
    let mut rms = vec![0.0; nn];
    for k in 0..nn {
        let phi = if sys.phi2.is_zero() { Vec::new() } else { kernel_blocks(&sys.phi2, k, k) };
        let psi = if sys.psi2.is_zero() { Vec::new() } else { kernel_blocks(&sys.psi2, k, k + 1) };
        let mut target = vec![0.0; np * m];
        let mut lam = vec![0.0; np * m];
        for p in 0..np {
            let t = &mut target[p * m..(p + 1) * m];
            if k + d < nn {
                t.iter_mut().zip(part(p, k + d, Arg::Mu)).for_each(|(a, b)| *a += b);
            }
            for (off, b) in phi.iter().enumerate() {
                let hv = part(p, k + off, Arg::Nu);
                for c in 0..m {
                    t[c] += (0..m).map(|r| b[r * m + c] * hv[r]).sum::<f64>() * dt;
                }
            }
            let l = &mut lam[p * m..(p + 1) * m];
            for (off, b) in psi.iter().enumerate() {
                let hl = part(p, k + 1 + off, Arg::Lambda);
                for c in 0..m {
                    l[c] += (0..m).map(|r| b[r * m + c] * hl[r]).sum::<f64>() * dt;
                }
            }
        }
        for c in 0..m {
            let col: Vec<f64> = (0..np).map(|p| lam[p * m + c]).collect();
            if constant_value(&col).is_none() {
                for p in 0..np {
                    target[p * m + c] += col[p] * prob.w.dw(p, k) / dt;
                }
            }
        }
        let mut reg = LazyRegression::new(&prob.features, k, prob.options.regression);
        let cond = reg.project_interleaved(&target, m)?;
        let mut sq = vec![0.0; np];
        for c in 0..m {
            let gk: Vec<f64> = (0..np).map(|p| part(p, k, Arg::U)[c] + cond[p * m + c]).collect();
            let (mu, var) = mean_var(&gk);
            mean[k * m + c] = mu;
            std_err[k * m + c] = (var / np as f64).sqrt();
            for (s, v) in sq.iter_mut().zip(&gk) {
                *s += v * v;
            }
        }
        rms[k] = (sq.iter().sum::<f64>() / np as f64).sqrt();
    }
    Ok(MaximumReport {
        times: (0..nn).map(|k| g.t(k)).collect(),
        m,
        mean,
        std_err,
        rms,
        sigmas: opts.sigmas,
        bias: opts.bias,
    })
}
