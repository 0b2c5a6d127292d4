use super::model::{DenominatorReading, LqSpec};
use crate::error::{Error, Result};
use crate::sdde_forward::ControlProcess;

/// Pieces of the closed form at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Terms {
    /// `f(t) + g(t+δ)1_{[t0,T−δ)}(t) + ∫_t^T φ2(s,t)h(s)ds`
    numerator: f64,
    /// Same with the indicator dropped.
    numerator_no_indicator: f64,
    denominator: f64,
    denominator_no_indicator: f64,
}

fn terms(spec: &LqSpec, k: usize) -> Terms {
    let g = spec.grid;
    let m = &spec.model;
    let (nn, d) = (g.n_steps, g.delay_steps);
    let t = g.t(k);
    let ahead = g.t(k) + g.delta();
    let memory: f64 = (k..nn)
        .map(|i| {
            let mut b = [0.0];
            m.phi2.eval_grid_into(&g, 1, i, k, &mut b);
            b[0] * m.h.at(g.t(i)) * g.dt
        })
        .sum();
    let open = k + d < nn;
    let gd = m.g.at(ahead);
    let r2d = m.r2.at(ahead);
    Terms {
        numerator: m.f.at(t) + if open { gd } else { 0.0 } + memory,
        numerator_no_indicator: m.f.at(t) + gd + memory,
        denominator: m.r1.at(t) + if open { r2d } else { 0.0 },
        denominator_no_indicator: m.r1.at(t) + r2d,
    }
}

/// Minimizer of the pointwise Hamiltonian for deterministic coefficients:
/// `u*(t) = −w·[f(t) + g(t+δ)1_{[t0,T−δ)}(t) + ∫_t^T φ2(s,t)h(s)ds] / (r1(t) + r2(t+δ)·1_{[t0,T−δ)}(t))`.
///
/// With `w = ½` this is the printed form with `2[r1 + r2]` in the denominator. The noisy-memory
/// term `∫ψ2(s,t)D_t k(s)ds` vanishes because `k` is deterministic. The memory integral is the
/// left-point sum `Σ_{i≥k} φ2(t_i, t_k)h(t_i)dt`.
pub fn lq_closed_form(spec: &LqSpec) -> Result<ControlProcess> {
    let g = spec.grid;
    let w = spec.model.terminal_weight;
    let mut values = Vec::with_capacity(g.n_steps + 1);
    for k in 0..=g.n_steps {
        let tm = terms(spec, k);
        let den = match spec.model.denominator {
            DenominatorReading::Indicator => tm.denominator,
            DenominatorReading::Literal => tm.denominator_no_indicator,
        };
        if den.abs() <= f64::EPSILON {
            return Err(Error::ZeroDenominator { t: g.t(k) });
        }
        values.push(-w * tm.numerator / den);
    }
    ControlProcess::open_loop(&g, 1, |k, _| vec![values[k]])
}

/// The sign-flipped reading `+w·[f + g(t+δ) + ∫φ2 h] / (r1 + r2(t+δ))` with both indicators
/// dropped. On the worked example it is `u(t) = T − t + 1`.
pub fn lq_stated_candidate(spec: &LqSpec) -> Result<ControlProcess> {
    let g = spec.grid;
    let w = spec.model.terminal_weight;
    let mut values = Vec::with_capacity(g.n_steps + 1);
    for k in 0..=g.n_steps {
        let tm = terms(spec, k);
        if tm.denominator_no_indicator.abs() <= f64::EPSILON {
            return Err(Error::ZeroDenominator { t: g.t(k) });
        }
        values.push(w * tm.numerator_no_indicator / tm.denominator_no_indicator);
    }
    ControlProcess::open_loop(&g, 1, |k, _| vec![values[k]])
}
