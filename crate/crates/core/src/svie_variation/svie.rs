use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::variational::{control_forcing, Forcing, VariationalSystem};
use crate::error::{Error, Result};
use crate::grid_rng::{BrownianEnsemble, TimeGrid};
use crate::kernels::{E1Field, E2Field};

/// Which quadrature nodes the memory kernels `E1`, `E2` keep after exchanging the order
/// of integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FubiniConvention {
    /// Nodes strictly after `t_j`; the discrete SVIE reproduces the Euler variational
    /// scheme exactly and stays adapted.
    #[default]
    Adapted,
    /// The inclusive left-rectangle `E1`, `E2` as tabulated by the kernel module.
    LeftPoint,
}

/// Reading of the delayed-row indicator `1(t − s > δ)` at the on-grid tie `t − s = δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayIndicator {
    #[default]
    Strict,
    Inclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SvieOptions {
    #[serde(default)]
    pub convention: FubiniConvention,
    #[serde(default)]
    pub indicator: DelayIndicator,
}

/// Delay-free Volterra form of the variational equation in `X = (x̂, ŷ, ẑ, κ̂)`.
///
/// Every block row is a scaling of the same coefficient row: by `1`, the delay indicator,
/// `E1(t, s)` and `E2(t, s)`. The blocks are never stored densely; `a`, `b`, `c`, `d` and
/// their split parts materialize one `(t_k, t_j)` entry on request.
#[derive(Debug, Clone)]
pub struct SvieSystem {
    pub grid: TimeGrid,
    pub n: usize,
    pub vs: VariationalSystem,
    pub forcing: Forcing,
    pub e1: E1Field,
    pub e2: E2Field,
    pub options: SvieOptions,
}

pub fn assemble_svie(vs: &VariationalSystem, e1: E1Field, e2: E2Field, options: SvieOptions) -> Result<SvieSystem> {
    let g = vs.base.grid;
    let n = vs.base.dims.n;
    if e1.n_steps != g.n_steps || e1.dim != n || e2.dim != n || e2.noise.grid.n_steps != g.n_steps {
        return Err(Error::InvalidInput("kernel fields do not match the variational system".into()));
    }
    let forcing = control_forcing(vs, &e2.noise);
    Ok(SvieSystem {
        grid: g,
        n,
        vs: vs.clone(),
        forcing,
        e1,
        e2,
        options,
    })
}

impl SvieSystem {
    pub fn delay_active(&self, k: usize, j: usize) -> bool {
        let d = self.grid.delay_steps;
        match self.options.indicator {
            DelayIndicator::Strict => k > j + d,
            DelayIndicator::Inclusive => k >= j + d,
        }
    }

    /// Number of leading increments `F_0, …` seen by the delayed row at step `k`.
    fn delayed_prefix_len(&self, k: usize) -> usize {
        let d = self.grid.delay_steps;
        match self.options.indicator {
            DelayIndicator::Strict => k.saturating_sub(d),
            DelayIndicator::Inclusive if k >= d => (k + 1 - d).min(k),
            DelayIndicator::Inclusive => 0,
        }
    }

    fn e1_block(&self, k: usize, j: usize) -> Vec<f64> {
        let mut out = self.e1.at(k, j).to_vec();
        if self.options.convention == FubiniConvention::Adapted {
            self.e1.strict_at(k, j, &mut out);
        }
        out
    }

    fn e2_row(&self, path: usize, k: usize) -> Vec<f64> {
        let mut row = self.e2.row(path, k);
        if self.options.convention == FubiniConvention::Adapted && !self.e2.is_zero() {
            let n2 = self.n * self.n;
            let mut node = vec![0.0; n2];
            for j in 0..k {
                self.e2.kernel.eval_grid_into(&self.grid, self.n, k, j, &mut node);
                let dw = self.e2.noise.dw(path, j);
                for i in 0..n2 {
                    row[j * n2 + i] -= node[i] * dw;
                }
            }
        }
        row
    }

    /// The four `n × n` row scalings at `(t_k, t_j)`.
    fn scalings(&self, path: usize, k: usize, j: usize) -> [DMatrix<f64>; 4] {
        let n = self.n;
        let id = DMatrix::identity(n, n);
        let ind = if self.delay_active(k, j) { id.clone() } else { DMatrix::zeros(n, n) };
        let e1 = DMatrix::from_row_slice(n, n, &self.e1_block(k, j));
        let n2 = n * n;
        let e2 = DMatrix::from_row_slice(n, n, &self.e2_row(path, k)[j * n2..(j + 1) * n2]);
        [id, ind, e1, e2]
    }

    fn coefficient_row(&self, diffusion: bool, path: usize, j: usize) -> DMatrix<f64> {
        let lin = &self.vs.lin;
        let len = lin.dims.args_len();
        let jac = if diffusion { lin.diffusion_jac.at(path, j) } else { lin.drift_jac.at(path, j) };
        let n = self.n;
        DMatrix::from_fn(n, 4 * n, |r, c| jac[r * len + c])
    }

    fn forcing_col(&self, diffusion: bool, path: usize, j: usize) -> DVector<f64> {
        let f = if diffusion { &self.forcing.diffusion } else { &self.forcing.drift };
        DVector::from_column_slice(f.at(path, j))
    }

    fn stack_matrix(&self, diffusion: bool, rows: &[usize], path: usize, k: usize, j: usize) -> DMatrix<f64> {
        let n = self.n;
        let mut out = DMatrix::zeros(4 * n, 4 * n);
        if j >= k {
            return out;
        }
        let base = self.coefficient_row(diffusion, path, j);
        let s = self.scalings(path, k, j);
        for &r in rows {
            out.view_mut((r * n, 0), (n, 4 * n)).copy_from(&(&s[r] * &base));
        }
        out
    }

    fn stack_vector(&self, diffusion: bool, rows: &[usize], path: usize, k: usize, j: usize) -> DVector<f64> {
        let n = self.n;
        let mut out = DVector::zeros(4 * n);
        if j >= k {
            return out;
        }
        let base = self.forcing_col(diffusion, path, j);
        let s = self.scalings(path, k, j);
        for &r in rows {
            out.rows_mut(r * n, n).copy_from(&(&s[r] * &base));
        }
        out
    }

    /// Drift block `𝔸(t_k, t_j)`; zero for `j ≥ k`.
    pub fn a(&self, path: usize, k: usize, j: usize) -> DMatrix<f64> {
        self.stack_matrix(false, &[0, 1, 2, 3], path, k, j)
    }
    pub fn a1(&self, path: usize, k: usize, j: usize) -> DMatrix<f64> {
        self.stack_matrix(false, &[0, 1, 2], path, k, j)
    }
    pub fn a2(&self, path: usize, k: usize, j: usize) -> DMatrix<f64> {
        self.stack_matrix(false, &[3], path, k, j)
    }
    /// Diffusion block `ℂ(t_k, t_j)`.
    pub fn c(&self, path: usize, k: usize, j: usize) -> DMatrix<f64> {
        self.stack_matrix(true, &[0, 1, 2, 3], path, k, j)
    }
    pub fn c1(&self, path: usize, k: usize, j: usize) -> DMatrix<f64> {
        self.stack_matrix(true, &[0, 1, 2], path, k, j)
    }
    pub fn c2(&self, path: usize, k: usize, j: usize) -> DMatrix<f64> {
        self.stack_matrix(true, &[3], path, k, j)
    }
    /// Drift forcing `𝔹(t_k, t_j)`.
    pub fn b(&self, path: usize, k: usize, j: usize) -> DVector<f64> {
        self.stack_vector(false, &[0, 1, 2, 3], path, k, j)
    }
    pub fn b1(&self, path: usize, k: usize, j: usize) -> DVector<f64> {
        self.stack_vector(false, &[0, 1, 2], path, k, j)
    }
    pub fn b2(&self, path: usize, k: usize, j: usize) -> DVector<f64> {
        self.stack_vector(false, &[3], path, k, j)
    }
    /// Diffusion forcing `𝔻(t_k, t_j)`.
    pub fn d(&self, path: usize, k: usize, j: usize) -> DVector<f64> {
        self.stack_vector(true, &[0, 1, 2, 3], path, k, j)
    }
    pub fn d1(&self, path: usize, k: usize, j: usize) -> DVector<f64> {
        self.stack_vector(true, &[0, 1, 2], path, k, j)
    }
    pub fn d2(&self, path: usize, k: usize, j: usize) -> DVector<f64> {
        self.stack_vector(true, &[3], path, k, j)
    }

    /// Per-path scaling rows for the whole grid, used by the solvers that sweep `(k, j)`.
    /// Returns `s_r(k, j)` as `n × n` blocks for `r = 0..4` (row-major).
    pub fn scaling_block(&self, row: usize, path: usize, k: usize, j: usize) -> Vec<f64> {
        let n = self.n;
        match row {
            0 => identity(n),
            1 => {
                if self.delay_active(k, j) {
                    identity(n)
                } else {
                    vec![0.0; n * n]
                }
            }
            2 => self.e1_block(k, j),
            _ => self.e2_row(path, k)[j * n * n..(j + 1) * n * n].to_vec(),
        }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    v
}

/// Paths of `X = (x̂, ŷ, ẑ, κ̂)`, stored `4n` per grid point.
#[derive(Debug, Clone)]
pub struct SvieTrajectories {
    pub grid: TimeGrid,
    pub n: usize,
    pub n_paths: usize,
    pub data: Vec<f64>,
}

impl SvieTrajectories {
    pub fn at(&self, path: usize, k: usize) -> &[f64] {
        let w = 4 * self.n;
        let o = (path * (self.grid.n_steps + 1) + k) * w;
        &self.data[o..o + w]
    }

    /// Block `row` (0: x̂, 1: ŷ, 2: ẑ, 3: κ̂) at `(path, k)`.
    pub fn component(&self, row: usize, path: usize, k: usize) -> &[f64] {
        &self.at(path, k)[row * self.n..(row + 1) * self.n]
    }
}

fn matvec_add(block: &[f64], v: &[f64], out: &mut [f64]) {
    let n = out.len();
    for r in 0..n {
        out[r] += (0..n).map(|c| block[r * n + c] * v[c]).sum::<f64>();
    }
}

/// Left-point Volterra–Euler: `X_k = Σ_{j<k} [𝔸(t_k,t_j)X_j + 𝔹(t_k,t_j)]dt + [ℂ X_j + 𝔻]ΔW_j`.
///
/// Each block row shares the increment `F_j = (b X_j + Ξb_j)dt + (σ X_j + Ξσ_j)ΔW_j`, so the
/// first two rows are prefix sums and the memory rows cost `O(k)` per step.
pub fn simulate_svie(svie: &SvieSystem, w: &BrownianEnsemble) -> Result<SvieTrajectories> {
    let g = svie.grid;
    if !w.shares_noise_with(&svie.e2.noise) {
        return Err(Error::InvalidInput("the SVIE was assembled on a different Brownian ensemble".into()));
    }
    let n = svie.n;
    let nt = g.n_steps + 1;
    let width = 4 * n;
    let lin = &svie.vs.lin;
    let len = lin.dims.args_len();
    let mut data = vec![0.0; w.n_paths * nt * width];
    let res: Result<()> = data.par_chunks_mut(nt * width).enumerate().try_for_each(|(p, xs)| {
        let mut incr = vec![0.0; nt * n];
        let mut prefix = vec![0.0; nt * n];
        for k in 0..nt {
            let xk = &mut xs[k * width..(k + 1) * width];
            xk.fill(0.0);
            xk[..n].copy_from_slice(&prefix[k * n..(k + 1) * n]);
            let upto = svie.delayed_prefix_len(k);
            xk[n..2 * n].copy_from_slice(&prefix[upto * n..(upto + 1) * n]);
            if !svie.vs.base.phi1.is_zero() {
                for j in 0..k {
                    matvec_add(&svie.e1_block(k, j), &incr[j * n..(j + 1) * n], &mut xk[2 * n..3 * n]);
                }
            }
            if !svie.e2.is_zero() {
                let row = svie.e2_row(p, k);
                for j in 0..k {
                    matvec_add(&row[j * n * n..(j + 1) * n * n], &incr[j * n..(j + 1) * n], &mut xk[3 * n..4 * n]);
                }
            }
            if k + 1 == nt {
                break;
            }
            let jb = lin.drift_jac.at(p, k);
            let js = lin.diffusion_jac.at(p, k);
            let fb = svie.forcing.drift.at(p, k);
            let fs = svie.forcing.diffusion.at(p, k);
            let dw = w.dw(p, k);
            for i in 0..n {
                let mut b = fb[i];
                let mut s = fs[i];
                for c in 0..width {
                    b += jb[i * len + c] * xk[c];
                    s += js[i * len + c] * xk[c];
                }
                let f = b * g.dt + s * dw;
                if !f.is_finite() {
                    return Err(Error::NonFinite {
                        context: "SVIE simulation",
                        path: p,
                        step: k + 1,
                    });
                }
                incr[k * n + i] = f;
                prefix[(k + 1) * n + i] = prefix[k * n + i] + f;
            }
        }
        Ok(())
    });
    res?;
    Ok(SvieTrajectories {
        grid: g,
        n,
        n_paths: w.n_paths,
        data,
    })
}
