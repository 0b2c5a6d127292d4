use rayon::prelude::*;

use super::problem::{hamiltonian_gradient, AdjointMethod, AdjointProblem, AdjointSolution};
use super::regression::{constant_value, LazyRegression};
use crate::error::{Error, Result};

/// Backward recursion for the anticipated BSDE form of the adjoint (regime `E1 ≡ 0`).
///
/// With `G_j` the pathwise sensitivity of the cost to the increment `F_j`,
/// `G_j = G_{j+1} + dt·Y¹_{j+1} + dt·Y²_{j+1+d} + 1(N = j+1+d)ℍ² + ΔW_{j+1}·M_{j+1}` where
/// `M_{j+1} = ψ1(N, t_{j+1})ᵀℍ⁴ + Σ_{k>j+1} ψ1(t_k, t_{j+1})ᵀY⁴_k dt`. Then
/// `p_j = E_j[G_j]`, `q_j = E_j[G_j ΔW_j]/dt`. The `ΔW_{j+1}·M` term carries the
/// conditional Malliavin derivative of the anticipated quantities; it vanishes identically
/// when `M` does not depend on the path.
pub fn solve_absde(prob: &AdjointProblem) -> Result<AdjointSolution> {
    let sys = &prob.sys;
    if !sys.phi1.is_zero() {
        return Err(Error::UnsupportedRegime(
            "the anticipated BSDE form needs E1 ≡ 0 (phi1 = 0); use solve_bsvie_linear".into(),
        ));
    }
    let g = sys.grid;
    let nn = g.n_steps;
    let n = sys.dims.n;
    let d = g.delay_steps;
    let np = prob.w.n_paths;
    let nt = nn + 1;
    let sl = 4 * n;
    let len = sys.dims.args_len();
    let dt = g.dt;
    let lin = &prob.lin;
    let mut sol = AdjointSolution::zeros(prob, AdjointMethod::Absde);

    for path in 0..np {
        let o = (path * nt + nn) * n;
        sol.p[o..o + n].copy_from_slice(&lin.terminal_grad.at(path, 0)[..n]);
    }

    let psi_active = !sys.psi1.is_zero();
    let mut blocks: Vec<Vec<f64>> = Vec::new();

    for j in (0..nn).rev() {
        let next = j + 1;
        if psi_active && next < nn {
            blocks = (next + 1..=nn)
                .map(|k| {
                    let mut b = vec![0.0; n * n];
                    sys.psi1.eval_grid_into(&g, n, k, next, &mut b);
                    b
                })
                .collect();
        }
        let (p_all, y_all) = (&sol.p, &sol.y);
        let per_path: Vec<(Vec<f64>, Vec<f64>)> = (0..np)
            .into_par_iter()
            .map(|path| {
                let pn = &p_all[(path * nt + next) * n..(path * nt + next + 1) * n];
                let mut t = pn.to_vec();
                if next < nn {
                    let y = &y_all[(path * nt + next) * sl..(path * nt + next + 1) * sl];
                    for i in 0..n {
                        t[i] += dt * y[i];
                    }
                }
                if next + d < nn {
                    let k = next + d;
                    let y = &y_all[(path * nt + k) * sl..(path * nt + k + 1) * sl];
                    for i in 0..n {
                        t[i] += dt * y[n + i];
                    }
                }
                if next + d == nn {
                    let h = lin.terminal_grad.at(path, 0);
                    for i in 0..n {
                        t[i] += h[n + i];
                    }
                }
                let mut m = vec![0.0; n];
                if psi_active && next < nn {
                    let h = lin.terminal_grad.at(path, 0);
                    let last = &blocks[nn - next - 1];
                    for c in 0..n {
                        for r in 0..n {
                            m[c] += last[r * n + c] * h[3 * n + r];
                        }
                    }
                    for k in next + 1..nn {
                        let b = &blocks[k - next - 1];
                        let y = &y_all[(path * nt + k) * sl..(path * nt + k + 1) * sl];
                        for c in 0..n {
                            for r in 0..n {
                                m[c] += b[r * n + c] * y[3 * n + r] * dt;
                            }
                        }
                    }
                }
                (t, m)
            })
            .collect();

        let mut targets = vec![0.0; np * n];
        let mut ms = vec![0.0; np * n];
        for (path, (t, m)) in per_path.into_iter().enumerate() {
            targets[path * n..(path + 1) * n].copy_from_slice(&t);
            ms[path * n..(path + 1) * n].copy_from_slice(&m);
        }
        for c in 0..n {
            let col: Vec<f64> = (0..np).map(|p| ms[p * n + c]).collect();
            if constant_value(&col).is_none() {
                for p in 0..np {
                    targets[p * n + c] += prob.w.dw(p, next) * col[p];
                }
            }
        }

        let mut reg = LazyRegression::new(&prob.features, j, prob.options.regression);
        let pj = reg.project_interleaved(&targets, n)?;
        let mut qt = vec![0.0; np * n];
        for p in 0..np {
            let dw = prob.w.dw(p, j);
            for c in 0..n {
                qt[p * n + c] = (targets[p * n + c] - pj[p * n + c]) * dw / dt;
            }
        }
        let qj = reg.project_interleaved(&qt, n)?;
        if let Some(c) = reg.condition() {
            sol.conditions.push(c);
        }

        let mut grad = vec![0.0; len];
        for p in 0..np {
            let o = (p * nt + j) * n;
            sol.p[o..o + n].copy_from_slice(&pj[p * n..(p + 1) * n]);
            sol.q[o..o + n].copy_from_slice(&qj[p * n..(p + 1) * n]);
            hamiltonian_gradient(lin, p, j, &pj[p * n..(p + 1) * n], &qj[p * n..(p + 1) * n], &mut grad);
            let oy = (p * nt + j) * sl;
            sol.y[oy..oy + sl].copy_from_slice(&grad[..sl]);
        }
        if pj.iter().chain(&qj).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "adjoint recursion",
                path: 0,
                step: j,
            });
        }
    }
    Ok(sol)
}
