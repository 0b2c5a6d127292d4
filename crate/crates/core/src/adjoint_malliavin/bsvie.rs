use rayon::prelude::*;

use super::problem::{hamiltonian_gradient, AdjointMethod, AdjointProblem, AdjointSolution, BsvieParts};
use super::regression::LazyRegression;
use crate::error::{Error, Result};

/// Linear BSVIE for `(Y, Z)` together with `(η, ζ)`, and the adjoint pair aggregated from them:
/// `p(t) = Σ_r s_r(T, t)ᵀη^r(t) + E_t[∫_t^T Σ_r s_r(s, t)ᵀY^r(s) ds]` and `q` likewise with `ζ`
/// and the band of `Z`. Requires a vanishing diffusion memory kernel (`E2 ≡ 0`).
///
/// `q` uses the one-step control variate `E_{j+1}[·]` before weighting by `ΔW_j`.
pub fn solve_bsvie_linear(prob: &AdjointProblem) -> Result<AdjointSolution> {
    let sys = &prob.sys;
    if !sys.psi1.is_zero() {
        return Err(Error::UnsupportedRegime(
            "the linear BSVIE route needs psi1 = 0; use solve_absde".into(),
        ));
    }
    let g = sys.grid;
    let nn = g.n_steps;
    let n = sys.dims.n;
    let np = prob.w.n_paths;
    let nt = nn + 1;
    let sl = 4 * n;
    let len = sys.dims.args_len();
    let dt = g.dt;
    let lin = &prob.lin;
    let ropts = prob.options.regression;
    let mut sol = AdjointSolution::zeros(prob, AdjointMethod::Bsvie);
    let mut parts = BsvieParts {
        eta: vec![0.0; np * nt * sl],
        zeta: vec![0.0; np * nt * sl],
        y_part: vec![0.0; np * nt * n],
        z_band: vec![0.0; np * nt * n],
    };

    let mut hh = vec![0.0; np * sl];
    for p in 0..np {
        hh[p * sl..(p + 1) * sl].copy_from_slice(lin.terminal_grad.at(p, 0));
        let o = (p * nt + nn) * sl;
        parts.eta[o..o + sl].copy_from_slice(lin.terminal_grad.at(p, 0));
        let mut pn = vec![0.0; n];
        prob.add_scaled_transpose(nn, nn, lin.terminal_grad.at(p, 0), &mut pn);
        sol.p[(p * nt + nn) * n..(p * nt + nn + 1) * n].copy_from_slice(&pn);
    }

    let mut reg_next = LazyRegression::new(&prob.features, nn, ropts);
    for j in (0..nn).rev() {
        let mut reg = LazyRegression::new(&prob.features, j, ropts);

        let eta_j = reg.project_interleaved(&hh, sl)?;
        let mut zt = vec![0.0; np * sl];
        for p in 0..np {
            let dw = prob.w.dw(p, j);
            let o = (p * nt + j + 1) * sl;
            for c in 0..sl {
                zt[p * sl + c] = (parts.eta[o + c] - eta_j[p * sl + c]) * dw / dt;
            }
        }
        let zeta_j = reg.project_interleaved(&zt, sl)?;

        let y_all = &sol.y;
        let gy: Vec<f64> = (0..np)
            .into_par_iter()
            .flat_map_iter(|p| {
                let mut acc = vec![0.0; n];
                for k in j + 1..nn {
                    let y = &y_all[(p * nt + k) * sl..(p * nt + k + 1) * sl];
                    let mut s = vec![0.0; n];
                    prob.add_scaled_transpose(k, j, y, &mut s);
                    for i in 0..n {
                        acc[i] += s[i] * dt;
                    }
                }
                acc
            })
            .collect();
        let ypart = reg.project_interleaved(&gy, n)?;
        let cv = reg_next.project_interleaved(&gy, n)?;
        let mut bt = vec![0.0; np * n];
        for p in 0..np {
            let dw = prob.w.dw(p, j);
            for c in 0..n {
                bt[p * n + c] = (cv[p * n + c] - ypart[p * n + c]) * dw / dt;
            }
        }
        let band = reg.project_interleaved(&bt, n)?;
        if let Some(c) = reg.condition() {
            sol.conditions.push(c);
        }

        let mut grad = vec![0.0; len];
        for p in 0..np {
            let oe = (p * nt + j) * sl;
            parts.eta[oe..oe + sl].copy_from_slice(&eta_j[p * sl..(p + 1) * sl]);
            parts.zeta[oe..oe + sl].copy_from_slice(&zeta_j[p * sl..(p + 1) * sl]);
            let on = (p * nt + j) * n;
            parts.y_part[on..on + n].copy_from_slice(&ypart[p * n..(p + 1) * n]);
            parts.z_band[on..on + n].copy_from_slice(&band[p * n..(p + 1) * n]);

            let mut pj = ypart[p * n..(p + 1) * n].to_vec();
            prob.add_scaled_transpose(nn, j, &eta_j[p * sl..(p + 1) * sl], &mut pj);
            let mut qj = band[p * n..(p + 1) * n].to_vec();
            prob.add_scaled_transpose(nn, j, &zeta_j[p * sl..(p + 1) * sl], &mut qj);
            if pj.iter().chain(&qj).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "BSVIE sweep",
                    path: p,
                    step: j,
                });
            }
            hamiltonian_gradient(lin, p, j, &pj, &qj, &mut grad);
            sol.y[oe..oe + sl].copy_from_slice(&grad[..sl]);
            sol.p[on..on + n].copy_from_slice(&pj);
            sol.q[on..on + n].copy_from_slice(&qj);
        }
        reg_next = reg;
    }
    sol.parts = Some(parts);
    Ok(sol)
}
