use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::regression::{Features, RegressionOptions};
use crate::error::{Error, Result};
use crate::grid_rng::{BrownianEnsemble, TimeGrid};
use crate::kernels::{build_e1, E1Field};
use crate::sdde_forward::{simulate, ControlProcess, DelaySystem, Trajectories};
use crate::svie_variation::{linearize, DelayIndicator, FubiniConvention, Linearization, SvieOptions};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AdjointOptions {
    #[serde(default)]
    pub regression: RegressionOptions,
    /// Adds `W(t − δ)` to the conditioning variables.
    #[serde(default)]
    pub delayed_brownian: bool,
    #[serde(default)]
    pub svie: SvieOptions,
}

/// Everything the backward solvers need along one candidate pair `(x*, u*)`.
#[derive(Debug, Clone)]
pub struct AdjointProblem {
    pub sys: DelaySystem,
    pub w: BrownianEnsemble,
    pub traj: Trajectories,
    pub lin: Arc<Linearization>,
    pub features: Features,
    pub options: AdjointOptions,
    pub(crate) e1: E1Field,
}

impl AdjointProblem {
    pub fn new(sys: &DelaySystem, u_star: &ControlProcess, w: &BrownianEnsemble, options: AdjointOptions) -> Result<Self> {
        let traj = simulate(sys, u_star, w)?;
        let lin = Arc::new(linearize(sys, &traj)?);
        Self::from_parts(sys, traj, lin, w, options)
    }

    pub fn from_parts(
        sys: &DelaySystem,
        traj: Trajectories,
        lin: Arc<Linearization>,
        w: &BrownianEnsemble,
        options: AdjointOptions,
    ) -> Result<Self> {
        if lin.n_paths != w.n_paths || traj.n_paths != w.n_paths || w.grid.n_steps != sys.grid.n_steps {
            return Err(Error::InvalidInput("trajectories, linearization and noise disagree".into()));
        }
        let features = Features::from_trajectories(&traj, w, options.delayed_brownian);
        let e1 = build_e1(&sys.phi1, &sys.grid, sys.dims.n);
        Ok(AdjointProblem {
            sys: sys.clone(),
            w: w.clone(),
            traj,
            lin,
            features,
            options,
            e1,
        })
    }

    pub(crate) fn delay_active(&self, k: usize, j: usize) -> bool {
        let d = self.sys.grid.delay_steps;
        match self.options.svie.indicator {
            DelayIndicator::Strict => k > j + d,
            DelayIndicator::Inclusive => k >= j + d,
        }
    }

    /// `out += Σ_r s_r(k, j)ᵀ v^r` over the deterministic rows `x, y, z`.
    pub(crate) fn add_scaled_transpose(&self, k: usize, j: usize, v: &[f64], out: &mut [f64]) {
        let n = self.sys.dims.n;
        for i in 0..n {
            out[i] += v[i];
        }
        if self.delay_active(k, j) {
            for i in 0..n {
                out[i] += v[n + i];
            }
        }
        if !self.sys.phi1.is_zero() {
            let blk = self.e1.at(k, j);
            let diag = self.e1.diagonal_node(k, j);
            let strict = self.options.svie.convention == FubiniConvention::Adapted;
            for c in 0..n {
                for r in 0..n {
                    let e = if strict { blk[r * n + c] - diag[r * n + c] } else { blk[r * n + c] };
                    out[c] += e * v[2 * n + r];
                }
            }
        }
    }
}

/// Gradient of `H = l + ⟨b, p⟩ + ⟨σ, q⟩` in the stacked arguments at `(path, k)`.
pub(crate) fn hamiltonian_gradient(lin: &Linearization, path: usize, k: usize, p: &[f64], q: &[f64], out: &mut [f64]) {
    let len = lin.dims.args_len();
    let l = lin.running_grad.at(path, k);
    let jb = lin.drift_jac.at(path, k);
    let js = lin.diffusion_jac.at(path, k);
    for c in 0..len {
        let mut v = l[c];
        for i in 0..p.len() {
            v += jb[i * len + c] * p[i] + js[i * len + c] * q[i];
        }
        out[c] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointMethod {
    Absde,
    Bsvie,
}

/// The Volterra ingredients behind a BSVIE solve.
#[derive(Debug, Clone)]
pub struct BsvieParts {
    /// `η(t_k) = E_k[ℍ]`, `4n` per `(path, k)`.
    pub eta: Vec<f64>,
    /// `ζ(t_k)`, the martingale integrand of `η`.
    pub zeta: Vec<f64>,
    /// `E_k[Σ_{i>k} Σ_r s_r(i, k)ᵀ Y^r_i dt]`, `n` per `(path, k)`.
    pub y_part: Vec<f64>,
    /// The aggregated band `∫ Σ_r s_r(s, t)ᵀ Z^r(s, t) ds`, `n` per `(path, k)`.
    pub z_band: Vec<f64>,
}

/// Adjoint pair `(p, q)` with the state gradient `Y = ∂H/∂(x, y, z, κ)`.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub grid: TimeGrid,
    pub n: usize,
    pub n_paths: usize,
    pub method: AdjointMethod,
    pub svie: SvieOptions,
    /// `n` per `(path, k)` for `k = 0..=n_steps`.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// `4n` per `(path, k)`; zero at `k = n_steps`.
    pub y: Vec<f64>,
    pub parts: Option<BsvieParts>,
    pub conditions: Vec<f64>,
}

impl AdjointSolution {
    pub(crate) fn zeros(prob: &AdjointProblem, method: AdjointMethod) -> Self {
        let g = prob.sys.grid;
        let n = prob.sys.dims.n;
        let nt = g.n_steps + 1;
        let np = prob.w.n_paths;
        AdjointSolution {
            grid: g,
            n,
            n_paths: np,
            method,
            svie: prob.options.svie,
            p: vec![0.0; np * nt * n],
            q: vec![0.0; np * nt * n],
            y: vec![0.0; np * nt * 4 * n],
            parts: None,
            conditions: Vec::new(),
        }
    }

    fn idx(&self, path: usize, k: usize, w: usize) -> usize {
        (path * (self.grid.n_steps + 1) + k) * w
    }

    pub fn p(&self, path: usize, k: usize) -> &[f64] {
        let o = self.idx(path, k, self.n);
        &self.p[o..o + self.n]
    }

    pub fn q(&self, path: usize, k: usize) -> &[f64] {
        let o = self.idx(path, k, self.n);
        &self.q[o..o + self.n]
    }

    pub fn y(&self, path: usize, k: usize) -> &[f64] {
        let o = self.idx(path, k, 4 * self.n);
        &self.y[o..o + 4 * self.n]
    }

    /// Cross-path mean and standard deviation of `p` (or `q`) component `c` at step `k`.
    pub fn moments(&self, q_field: bool, c: usize, k: usize) -> (f64, f64) {
        let xs: Vec<f64> = (0..self.n_paths)
            .map(|p| if q_field { self.q(p, k)[c] } else { self.p(p, k)[c] })
            .collect();
        let (m, v) = crate::stats::mean_var(&xs);
        (m, v.sqrt())
    }

    /// Columns `t, component, p_mean, p_std, q_mean, q_std`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["t", "component", "p_mean", "p_std", "q_mean", "q_std"])
            ?;
        for k in 0..=self.grid.n_steps {
            for c in 0..self.n {
                let (pm, ps) = self.moments(false, c, k);
                let (qm, qs) = self.moments(true, c, k);
                wr.write_record(&[
                    self.grid.t(k).to_string(),
                    c.to_string(),
                    pm.to_string(),
                    ps.to_string(),
                    qm.to_string(),
                    qs.to_string(),
                ])
                ?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}
