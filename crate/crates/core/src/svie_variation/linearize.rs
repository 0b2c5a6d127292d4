use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid_rng::TimeGrid;
use crate::sdde_forward::{Arg, DelaySystem, Dims, Trajectories};

/// A per-path, per-step vector field; stored once when it does not depend on the path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathField {
    pub width: usize,
    pub n_times: usize,
    pub n_paths: usize,
    constant: bool,
    data: Vec<f64>,
}

impl PathField {
    /// The same `value` at every `(path, k)`.
    pub fn constant(value: Vec<f64>, n_times: usize, n_paths: usize) -> Self {
        PathField {
            width: value.len(),
            n_times,
            n_paths,
            constant: true,
            data: value,
        }
    }

    pub fn per_path(width: usize, n_times: usize, n_paths: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * n_times * n_paths);
        PathField {
            width,
            n_times,
            n_paths,
            constant: false,
            data,
        }
    }

    pub fn zeros(width: usize, n_times: usize, n_paths: usize) -> Self {
        Self::constant(vec![0.0; width], n_times, n_paths)
    }

    #[inline]
    pub fn at(&self, path: usize, k: usize) -> &[f64] {
        if self.constant {
            &self.data
        } else {
            let o = (path * self.n_times + k) * self.width;
            &self.data[o..o + self.width]
        }
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    /// True when, at every step, all paths carry identical values.
    pub fn is_deterministic(&self) -> bool {
        if self.constant {
            return true;
        }
        (1..self.n_paths).all(|p| {
            let a = &self.data[..self.n_times * self.width];
            let o = p * self.n_times * self.width;
            &self.data[o..o + self.n_times * self.width] == a
        })
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Derivatives of the coefficients and costs along a candidate pair `(x*, u*)`.
///
/// Jacobians are row-major `n × (4n + 4m)` against the stacked arguments
/// `(x, y, z, κ, u, μ, ν, λ)`; cost gradients have the argument layout of their cost.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub grid: TimeGrid,
    pub dims: Dims,
    pub n_paths: usize,
    pub drift_jac: PathField,
    pub diffusion_jac: PathField,
    /// `∇l` on steps `0..n_steps` (the last row is unused and zero).
    pub running_grad: PathField,
    /// `∇h(x_N, y_N, z_N, κ_N)` per path, stored at `k = 0`.
    pub terminal_grad: PathField,
}

impl Linearization {
    /// `∂b/∂arg` as an `n × width(arg)` row-major block at `(path, k)`.
    pub fn drift_block(&self, arg: Arg, path: usize, k: usize) -> Vec<f64> {
        block(self.dims, self.drift_jac.at(path, k), arg)
    }

    pub fn diffusion_block(&self, arg: Arg, path: usize, k: usize) -> Vec<f64> {
        block(self.dims, self.diffusion_jac.at(path, k), arg)
    }

    pub fn running_partial(&self, arg: Arg, path: usize, k: usize) -> &[f64] {
        &self.running_grad.at(path, k)[self.dims.range(arg)]
    }

    pub fn terminal_partial(&self, arg: Arg, path: usize) -> &[f64] {
        &self.terminal_grad.at(path, 0)[self.dims.range(arg)]
    }
}

fn block(dims: Dims, jac: &[f64], arg: Arg) -> Vec<f64> {
    let len = dims.args_len();
    let r = dims.range(arg);
    let mut out = Vec::with_capacity(dims.n * r.len());
    for i in 0..dims.n {
        out.extend_from_slice(&jac[i * len + r.start..i * len + r.end]);
    }
    out
}

/// Derivative processes `b_x … σ_λ`, `l_x … l_λ`, `h_x … h_κ` along `traj`.
pub fn linearize(sys: &DelaySystem, traj: &Trajectories) -> Result<Linearization> {
    let g = sys.grid;
    let dims = sys.dims;
    let len = dims.args_len();
    let nt = g.n_steps + 1;
    let np = traj.n_paths;
    let zeros = vec![0.0; len];

    let jac_field = |coef: &crate::sdde_forward::VectorCoefficient| -> PathField {
        if coef.has_constant_jacobian() {
            let mut j = vec![0.0; dims.n * len];
            coef.jacobian(g.t0, &zeros, dims.n, &mut j);
            return PathField::constant(j, nt, np);
        }
        let w = dims.n * len;
        let mut data = vec![0.0; np * nt * w];
        data.par_chunks_mut(nt * w).enumerate().for_each(|(p, chunk)| {
            let mut a = vec![0.0; len];
            for k in 0..nt {
                traj.args(p, k, &mut a);
                coef.jacobian(g.t(k), &a, dims.n, &mut chunk[k * w..(k + 1) * w]);
            }
        });
        PathField::per_path(w, nt, np, data)
    };
    let drift_jac = jac_field(&sys.drift);
    let diffusion_jac = jac_field(&sys.diffusion);

    let running_grad = if sys.running_cost.has_constant_gradient() {
        let mut gr = vec![0.0; len];
        sys.running_cost.gradient(g.t0, &zeros, &mut gr);
        PathField::constant(gr, nt, np)
    } else {
        let mut data = vec![0.0; np * nt * len];
        data.par_chunks_mut(nt * len).enumerate().for_each(|(p, chunk)| {
            let mut a = vec![0.0; len];
            for k in 0..g.n_steps {
                traj.args(p, k, &mut a);
                sys.running_cost.gradient(g.t(k), &a, &mut chunk[k * len..(k + 1) * len]);
            }
        });
        PathField::per_path(len, nt, np, data)
    };

    let sl = dims.state_len();
    let terminal_grad = if sys.terminal_cost.has_constant_gradient() {
        let mut gr = vec![0.0; sl];
        sys.terminal_cost.gradient(g.t_end, &vec![0.0; sl], &mut gr);
        PathField::constant(gr, 1, np)
    } else {
        let mut data = vec![0.0; np * sl];
        data.par_chunks_mut(sl).enumerate().for_each(|(p, out)| {
            let mut a = vec![0.0; sl];
            traj.state_args(p, g.n_steps, &mut a);
            sys.terminal_cost.gradient(g.t_end, &a, out);
        });
        PathField::per_path(sl, 1, np, data)
    };

    let lin = Linearization {
        grid: g,
        dims,
        n_paths: np,
        drift_jac,
        diffusion_jac,
        running_grad,
        terminal_grad,
    };
    if ![&lin.drift_jac, &lin.diffusion_jac, &lin.running_grad, &lin.terminal_grad]
        .iter()
        .all(|f| f.all_finite())
    {
        return Err(Error::NonFinite {
            context: "linearization",
            path: 0,
            step: 0,
        });
    }
    Ok(lin)
}
