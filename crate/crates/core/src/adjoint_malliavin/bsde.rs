use super::regression::{Features, LazyRegression, RegressionOptions};
use crate::error::{Error, Result};
use crate::grid_rng::BrownianEnsemble;

/// `η(t) = ℍ − ∫_t^T ζ(s) dW(s)` on the grid, `width` components per path.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub width: usize,
    pub n_times: usize,
    pub n_paths: usize,
    pub eta: Vec<f64>,
    /// Zero at the last grid point.
    pub zeta: Vec<f64>,
}

impl BsdeSolution {
    pub fn eta(&self, path: usize, k: usize) -> &[f64] {
        let o = (path * self.n_times + k) * self.width;
        &self.eta[o..o + self.width]
    }

    pub fn zeta(&self, path: usize, k: usize) -> &[f64] {
        let o = (path * self.n_times + k) * self.width;
        &self.zeta[o..o + self.width]
    }
}

/// Solves the zero-driver BSDE with terminal value `terminal` (`width` per path, path-major).
///
/// `η_k = E_k[ℍ]` is regressed directly on the time-`k` features, which keeps the error from
/// accumulating along the sweep; `ζ_k = E_k[(η_{k+1} − η_k)ΔW_k]/dt`.
pub fn solve_bsde_terminal(
    terminal: &[f64],
    width: usize,
    features: &Features,
    w: &BrownianEnsemble,
    opts: &RegressionOptions,
) -> Result<BsdeSolution> {
    let np = w.n_paths;
    if terminal.len() != np * width || features.n_paths != np || features.n_times != w.grid.n_steps + 1 {
        return Err(Error::InvalidInput("terminal values or features do not match the ensemble".into()));
    }
    let nt = w.grid.n_steps + 1;
    let dt = w.grid.dt;
    let mut eta = vec![0.0; np * nt * width];
    let mut zeta = vec![0.0; np * nt * width];
    for p in 0..np {
        let o = (p * nt + nt - 1) * width;
        eta[o..o + width].copy_from_slice(&terminal[p * width..(p + 1) * width]);
    }
    for k in (0..nt - 1).rev() {
        let mut reg = LazyRegression::new(features, k, *opts);
        let e = reg.project_interleaved(terminal, width)?;
        let mut zt = vec![0.0; np * width];
        for p in 0..np {
            let dw = w.dw(p, k);
            let o = (p * nt + k + 1) * width;
            for c in 0..width {
                zt[p * width + c] = (eta[o + c] - e[p * width + c]) * dw / dt;
            }
        }
        let z = reg.project_interleaved(&zt, width)?;
        for p in 0..np {
            let o = (p * nt + k) * width;
            eta[o..o + width].copy_from_slice(&e[p * width..(p + 1) * width]);
            zeta[o..o + width].copy_from_slice(&z[p * width..(p + 1) * width]);
        }
    }
    Ok(BsdeSolution {
        width,
        n_times: nt,
        n_paths: np,
        eta,
        zeta,
    })
}
