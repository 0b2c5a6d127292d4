use std::sync::Arc;

use super::*;
use crate::cost_opt::{gateaux, GateauxMode};
use crate::error::Error;
use crate::grid_rng::{make_grid, sample_brownian, BrownianEnsemble, TimeGrid};
use crate::kernels::{build_e1, build_e2, KernelSpec};
use crate::sdde_forward::{
    simulate, Arg, ControlProcess, DelaySystem, Dims, InitialPath, LinearCoefficients, QuadraticForm, ScalarCoefficient,
    VectorCoefficient,
};
use crate::svie_variation::{assemble_svie, SvieOptions, VariationalSystem};

fn linear_terminal(dims: Dims, weights: &[(Arg, f64)]) -> ScalarCoefficient {
    let mut q = QuadraticForm::zeros(dims.state_len());
    for (a, v) in weights {
        q.linear[dims.offset(*a)] = *v;
    }
    ScalarCoefficient::Quadratic(q)
}

fn opts() -> AdjointOptions {
    AdjointOptions::default()
}

/// Cost response to a unit impulse added to `x_{j+1}`, through the forward simulator.
fn impulse_response(sys: &DelaySystem, u: &ControlProcess, w: &BrownianEnsemble, j: usize) -> f64 {
    let g = sys.grid;
    let base = crate::cost_opt::evaluate_cost(sys, u, w).unwrap().mean;
    let kick = ControlProcess::from_fn(&g, |t| if (t - g.t(j)).abs() < 1e-9 { 1.0 / g.dt } else { 0.0 });
    let pert = crate::cost_opt::evaluate_cost(sys, &u.plus_scaled(&kick, 1.0).unwrap(), w).unwrap().mean;
    pert - base
}

fn with_impulse_channel(dims: Dims, b: LinearCoefficients) -> VectorCoefficient {
    VectorCoefficient::Linear(b.with(dims, Arg::U, 1.0))
}

#[test]
fn terminal_state_cost_gives_unit_adjoint() {
    let g = make_grid(0.0, 1.0, 50, 0.1).unwrap();
    let dims = Dims::new(1, 1);
    let mut sys = DelaySystem::zero(g, dims);
    sys.terminal_cost = linear_terminal(dims, &[(Arg::X, 1.0)]);
    sys.diffusion = VectorCoefficient::Linear(LinearCoefficients::zeros(dims).with(dims, Arg::U, 0.5));
    let w = sample_brownian(g, 300, 1).unwrap();
    let prob = AdjointProblem::new(&sys, &ControlProcess::constant(&g, &[1.0]), &w, opts()).unwrap();
    for sol in [solve_absde(&prob).unwrap(), solve_bsvie_linear(&prob).unwrap()] {
        assert!(sol.p.iter().all(|v| *v == 1.0));
        assert!(sol.q.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn terminal_consistency() {
    let g = make_grid(0.0, 1.0, 20, 0.2).unwrap();
    let dims = Dims::new(1, 1);
    let mut sys = DelaySystem::zero(g, dims);
    sys.terminal_cost = linear_terminal(dims, &[(Arg::X, 0.7), (Arg::Y, 0.4), (Arg::Kappa, 0.3)]);
    sys.psi1 = KernelSpec::constant(0.5);
    sys.drift = VectorCoefficient::Linear(LinearCoefficients::zeros(dims).with(dims, Arg::Y, 0.2));
    let w = sample_brownian(g, 50, 2).unwrap();
    let prob = AdjointProblem::new(&sys, &ControlProcess::zero(&g, 1), &w, opts()).unwrap();
    let sol = solve_absde(&prob).unwrap();
    for p in 0..50 {
        assert_eq!(sol.p(p, g.n_steps), &[0.7]);
    }
}

#[test]
fn zero_generator_matches_terminal_bsde() {
    let g = make_grid(0.0, 1.0, 20, 0.0).unwrap();
    let dims = Dims::new(1, 1);
    let mut sys = DelaySystem::zero(g, dims);
    sys.diffusion = VectorCoefficient::Linear(LinearCoefficients::zeros(dims).with(dims, Arg::U, 1.0));
    let mut h = QuadraticForm::zeros(dims.state_len());
    h.weights[(0, 0)] = 1.0;
    sys.terminal_cost = ScalarCoefficient::Quadratic(h);
    let w = sample_brownian(g, 10_000, 3).unwrap();
    let prob = AdjointProblem::new(&sys, &ControlProcess::constant(&g, &[1.0]), &w, opts()).unwrap();
    let sol = solve_absde(&prob).unwrap();
    let term: Vec<f64> = (0..w.n_paths).map(|p| w.terminal_value(p)).collect();
    let bsde = solve_bsde_terminal(&term, 1, &Features::brownian(&w), &w, &RegressionOptions::default()).unwrap();
    for k in [0, 5, 12, 19] {
        let mut dp = 0.0;
        let mut dq = 0.0;
        for p in 0..w.n_paths {
            dp += (sol.p(p, k)[0] - bsde.eta(p, k)[0]).powi(2);
            dq += (sol.q(p, k)[0] - bsde.zeta(p, k)[0]).powi(2);
        }
        let n = w.n_paths as f64;
        assert!((dp / n).sqrt() < 0.03, "p gap at {k}: {}", (dp / n).sqrt());
        assert!((dq / n).sqrt() < 0.1, "q gap at {k}: {}", (dq / n).sqrt());
    }
}

fn delayed_ode(g: TimeGrid) -> DelaySystem {
    let dims = Dims::new(1, 1);
    let mut sys = DelaySystem::zero(g, dims);
    sys.drift = with_impulse_channel(dims, LinearCoefficients::zeros(dims).with(dims, Arg::X, -0.5).with(dims, Arg::Y, 0.8));
    sys.terminal_cost = linear_terminal(dims, &[(Arg::X, 1.0), (Arg::Y, 0.3)]);
    let mut l = QuadraticForm::zeros(dims.args_len());
    l.linear[dims.offset(Arg::X)] = 0.4;
    l.linear[dims.offset(Arg::Y)] = -0.2;
    sys.running_cost = ScalarCoefficient::Quadratic(l);
    sys.xi = InitialPath::constant(1.0);
    sys
}

#[test]
fn delayed_ode_adjoint_matches_impulse_oracle() {
    let g = make_grid(0.0, 1.0, 40, 0.25).unwrap();
    let sys = delayed_ode(g);
    let w = sample_brownian(g, 3, 4).unwrap();
    let u = ControlProcess::zero(&g, 1);
    let prob = AdjointProblem::new(&sys, &u, &w, opts()).unwrap();
    let sol = solve_absde(&prob).unwrap();
    for j in 0..g.n_steps {
        let oracle = impulse_response(&sys, &u, &w, j);
        assert!((sol.p(0, j)[0] - oracle).abs() < 1e-10 * (1.0 + oracle.abs()), "step {j}: {} vs {oracle}", sol.p(0, j)[0]);
        assert_eq!(sol.q(1, j)[0], 0.0);
    }
}

fn volterra_system(g: TimeGrid) -> DelaySystem {
    let dims = Dims::new(1, 1);
    let mut sys = DelaySystem::zero(g, dims);
    sys.drift = with_impulse_channel(
        dims,
        LinearCoefficients::zeros(dims).with(dims, Arg::X, -0.3).with(dims, Arg::Z, 0.5).with(dims, Arg::Y, 0.2),
    );
    sys.phi1 = KernelSpec::exponential(0.7, -0.4);
    sys.terminal_cost = linear_terminal(dims, &[(Arg::X, 1.0), (Arg::Z, 0.2)]);
    sys.xi = InitialPath::constant(0.5);
    sys
}

#[test]
fn volterra_adjoint_matches_impulse_oracle() {
    let g = make_grid(0.0, 1.0, 40, 0.1).unwrap();
    let sys = volterra_system(g);
    let w = sample_brownian(g, 2, 5).unwrap();
    let u = ControlProcess::zero(&g, 1);
    let prob = AdjointProblem::new(&sys, &u, &w, opts()).unwrap();
    assert!(matches!(solve_absde(&prob), Err(Error::UnsupportedRegime(_))));
    let sol = solve_bsvie_linear(&prob).unwrap();
    for j in 0..g.n_steps {
        let oracle = impulse_response(&sys, &u, &w, j);
        assert!((sol.p(0, j)[0] - oracle).abs() < 1e-8, "step {j}: {} vs {oracle}", sol.p(0, j)[0]);
    }
}

#[test]
fn bsvie_route_rejects_noisy_memory() {
    let g = make_grid(0.0, 1.0, 10, 0.1).unwrap();
    let mut sys = DelaySystem::zero(g, Dims::new(1, 1));
    sys.psi1 = KernelSpec::constant(0.3);
    let w = sample_brownian(g, 5, 1).unwrap();
    let prob = AdjointProblem::new(&sys, &ControlProcess::zero(&g, 1), &w, opts()).unwrap();
    assert!(matches!(solve_bsvie_linear(&prob), Err(Error::UnsupportedRegime(_))));
}

fn random_linear(g: TimeGrid, phi1: bool) -> DelaySystem {
    let dims = Dims::new(1, 1);
    let mut sys = DelaySystem::zero(g, dims);
    sys.drift = VectorCoefficient::Linear(
        LinearCoefficients::zeros(dims)
            .with(dims, Arg::X, -0.4)
            .with(dims, Arg::Y, 0.3)
            .with(dims, Arg::Z, if phi1 { 0.3 } else { 0.0 })
            .with(dims, Arg::U, 1.0)
            .with(dims, Arg::Mu, 0.5)
            .with(dims, Arg::Nu, 0.3),
    );
    sys.diffusion = VectorCoefficient::Linear(
        LinearCoefficients::zeros(dims).with(dims, Arg::X, 0.3).with(dims, Arg::Y, 0.1).with(dims, Arg::U, 0.2),
    );
    if phi1 {
        sys.phi1 = KernelSpec::exponential(0.6, -0.5);
    }
    sys.phi2 = KernelSpec::constant(1.0);
    let mut l = QuadraticForm::zeros(dims.args_len());
    l.weights[(0, 0)] = 0.5;
    l.weights[(dims.offset(Arg::U), dims.offset(Arg::U))] = 1.0;
    l.linear[0] = 0.1;
    sys.running_cost = ScalarCoefficient::Quadratic(l);
    let mut h = QuadraticForm::zeros(dims.state_len());
    h.weights[(0, 0)] = 1.0;
    h.linear[1] = 0.2;
    sys.terminal_cost = ScalarCoefficient::Quadratic(h);
    sys.xi = InitialPath::constant(1.0);
    sys
}

#[test]
fn absde_and_bsvie_agree_without_distributed_memory() {
    let g = make_grid(0.0, 1.0, 20, 0.2).unwrap();
    let sys = random_linear(g, false);
    let w = sample_brownian(g, 4000, 6).unwrap();
    let u = ControlProcess::from_fn(&g, |t| 0.5 - t);
    let prob = AdjointProblem::new(&sys, &u, &w, opts()).unwrap();
    let a = solve_absde(&prob).unwrap();
    let b = solve_bsvie_linear(&prob).unwrap();
    for k in [0, 4, 10, 17] {
        let mut d2 = 0.0;
        let mut p2 = 0.0;
        for p in 0..w.n_paths {
            d2 += (a.p(p, k)[0] - b.p(p, k)[0]).powi(2);
            p2 += a.p(p, k)[0].powi(2);
        }
        assert!(d2.sqrt() < 0.02 * p2.sqrt(), "step {k}: {} vs {}", d2.sqrt(), p2.sqrt());
    }
}

fn gradient_pair(sys: &DelaySystem, paths: usize, seed: u64) -> (f64, f64, f64) {
    let g = sys.grid;
    let w = sample_brownian(g, paths, seed).unwrap();
    let u = ControlProcess::from_fn(&g, |t| (3.0 * t).sin());
    let v = ControlProcess::from_fn(&g, |t| 1.0 + t);
    let prob = AdjointProblem::new(sys, &u, &w, opts()).unwrap();
    let sol = solve_bsvie_linear(&prob).unwrap();
    let vs = VariationalSystem::new(sys.clone(), prob.lin.clone(), v.clone()).unwrap();
    let f = crate::svie_variation::control_forcing(&vs, &w);
    let samples: Vec<f64> = (0..paths)
        .map(|p| {
            (0..g.n_steps)
                .map(|j| {
                    (f.running.at(p, j)[0] + sol.p(p, j)[0] * f.drift.at(p, j)[0] + sol.q(p, j)[0] * f.diffusion.at(p, j)[0])
                        * g.dt
                })
                .sum()
        })
        .collect();
    let est = crate::stats::McEstimate::from_samples(&samples, seed);
    let direct = gateaux(sys, &u, &v, &w, GateauxMode::AnalyticVariational).unwrap();
    (est.mean, direct.value, (est.std_err.powi(2) + direct.std_err.powi(2)).sqrt())
}

#[test]
fn adjoint_gradient_matches_variational_gradient() {
    let g = make_grid(0.0, 1.0, 20, 0.2).unwrap();
    let (a, b, se) = gradient_pair(&random_linear(g, true), 4000, 7);
    assert!((a - b).abs() < 3.0 * se + 1e-3 * b.abs(), "{a} vs {b} (se {se})");
}

fn svie_for(sys: &DelaySystem, prob: &AdjointProblem, v: ControlProcess) -> crate::svie_variation::SvieSystem {
    let vs = VariationalSystem::new(sys.clone(), prob.lin.clone(), v).unwrap();
    let e1 = build_e1(&sys.phi1, &sys.grid, sys.dims.n);
    let e2 = build_e2(&sys.psi1, &prob.w, sys.dims.n);
    assemble_svie(&vs, e1, e2, SvieOptions::default()).unwrap()
}

#[test]
fn duality_on_zero_system() {
    let g = make_grid(0.0, 1.0, 10, 0.1).unwrap();
    let sys = DelaySystem::zero(g, Dims::new(1, 1));
    let w = sample_brownian(g, 20, 1).unwrap();
    let prob = AdjointProblem::new(&sys, &ControlProcess::zero(&g, 1), &w, opts()).unwrap();
    let sol = solve_bsvie_linear(&prob).unwrap();
    let r = duality_check(&svie_for(&sys, &prob, ControlProcess::constant(&g, &[1.0])), &sol, &w, 3.0, 0.5).unwrap();
    assert_eq!(r.lhs.mean, 0.0);
    assert_eq!(r.rhs.mean, 0.0);
    assert!(r.passed());
}

#[test]
fn duality_deterministic_fubini() {
    let g = make_grid(0.0, 1.0, 40, 0.1).unwrap();
    let sys = volterra_system(g);
    let w = sample_brownian(g, 2, 8).unwrap();
    let prob = AdjointProblem::new(&sys, &ControlProcess::zero(&g, 1), &w, opts()).unwrap();
    let sol = solve_bsvie_linear(&prob).unwrap();
    let svie = svie_for(&sys, &prob, ControlProcess::from_fn(&g, |t| 1.0 - t));
    let r = duality_check(&svie, &sol, &w, 3.0, 0.5).unwrap();
    assert!((r.lhs.mean - r.rhs.mean).abs() < 1e-8 * (1.0 + r.lhs.mean.abs()), "{r:?}");
    assert!(r.lhs.mean.abs() > 1e-3);
}

#[test]
fn duality_on_random_linear_instance() {
    let g = make_grid(0.0, 1.0, 20, 0.2).unwrap();
    let sys = random_linear(g, true);
    let w = sample_brownian(g, 4000, 9).unwrap();
    let prob = AdjointProblem::new(&sys, &ControlProcess::from_fn(&g, |t| t), &w, opts()).unwrap();
    let sol = solve_bsvie_linear(&prob).unwrap();
    let r = duality_check(&svie_for(&sys, &prob, ControlProcess::from_fn(&g, |t| 1.0 - t)), &sol, &w, 3.0, 0.5).unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn duality_rejects_noisy_memory() {
    let g = make_grid(0.0, 1.0, 10, 0.1).unwrap();
    let mut sys = DelaySystem::zero(g, Dims::new(1, 1));
    let w = sample_brownian(g, 5, 1).unwrap();
    let prob = AdjointProblem::new(&sys, &ControlProcess::zero(&g, 1), &w, opts()).unwrap();
    let sol = solve_absde(&prob).unwrap();
    sys.psi1 = KernelSpec::constant(0.2);
    let lin = Arc::new(crate::svie_variation::linearize(&sys, &simulate(&sys, &ControlProcess::zero(&g, 1), &w).unwrap()).unwrap());
    let vs = VariationalSystem::new(sys.clone(), lin, ControlProcess::zero(&g, 1)).unwrap();
    let svie = assemble_svie(&vs, build_e1(&sys.phi1, &g, 1), build_e2(&sys.psi1, &w, 1), SvieOptions::default()).unwrap();
    assert!(matches!(duality_check(&svie, &sol, &w, 3.0, 0.5), Err(Error::UnsupportedRegime(_))));
}

#[test]
fn maximum_condition_vanishes_without_costs() {
    let g = make_grid(0.0, 1.0, 20, 0.1).unwrap();
    let mut sys = DelaySystem::zero(g, Dims::new(1, 1));
    sys.drift = VectorCoefficient::Linear(LinearCoefficients::zeros(sys.dims).with(sys.dims, Arg::U, 1.0));
    let w = sample_brownian(g, 30, 1).unwrap();
    let prob = AdjointProblem::new(&sys, &ControlProcess::zero(&g, 1), &w, opts()).unwrap();
    let sol = solve_absde(&prob).unwrap();
    let r = maximum_condition(&prob, &sol, &MaximumOptions::default()).unwrap();
    assert!(r.mean.iter().chain(&r.rms).all(|v| *v == 0.0));
    assert!(r.passed());
}

#[test]
fn maximum_condition_detects_nonstationary_control() {
    let g = make_grid(0.0, 1.0, 20, 0.1).unwrap();
    let dims = Dims::new(1, 1);
    let mut sys = DelaySystem::zero(g, dims);
    sys.drift = VectorCoefficient::Linear(LinearCoefficients::zeros(dims).with(dims, Arg::U, 1.0));
    let mut l = QuadraticForm::zeros(dims.args_len());
    l.weights[(dims.offset(Arg::U), dims.offset(Arg::U))] = 1.0;
    sys.running_cost = ScalarCoefficient::Quadratic(l);
    sys.terminal_cost = linear_terminal(dims, &[(Arg::X, 1.0)]);
    let w = sample_brownian(g, 30, 1).unwrap();
    let stationary = ControlProcess::constant(&g, &[-1.0]);
    let prob = AdjointProblem::new(&sys, &stationary, &w, opts()).unwrap();
    let r = maximum_condition(&prob, &solve_absde(&prob).unwrap(), &MaximumOptions::default()).unwrap();
    assert!(r.passed() && r.max_abs_mean() == 0.0);
    let prob = AdjointProblem::new(&sys, &ControlProcess::constant(&g, &[0.0]), &w, opts()).unwrap();
    let r = maximum_condition(&prob, &solve_absde(&prob).unwrap(), &MaximumOptions::default()).unwrap();
    assert!(!r.passed());
    assert_eq!(r.min_abs_mean_between(0.0, 1.0), 1.0);
}

#[test]
fn noisy_memory_malliavin_term() {
    // x' = u with a noisy control memory λ entering the drift; cost λ·x(T)-free:
    // the λ-channel sensitivity of x(T) is deterministic, so the D-term must vanish exactly.
    let g = make_grid(0.0, 1.0, 20, 0.1).unwrap();
    let dims = Dims::new(1, 1);
    let mut sys = DelaySystem::zero(g, dims);
    sys.drift = VectorCoefficient::Linear(LinearCoefficients::zeros(dims).with(dims, Arg::Lambda, 2.0));
    sys.psi2 = KernelSpec::constant(1.0);
    sys.terminal_cost = linear_terminal(dims, &[(Arg::X, 1.0)]);
    let w = sample_brownian(g, 40, 2).unwrap();
    let prob = AdjointProblem::new(&sys, &ControlProcess::zero(&g, 1), &w, opts()).unwrap();
    let r = maximum_condition(&prob, &solve_absde(&prob).unwrap(), &MaximumOptions::default()).unwrap();
    assert!(r.mean.iter().all(|v| *v == 0.0));
}

#[test]
fn degree_two_and_three_agree() {
    let g = make_grid(0.0, 1.0, 20, 0.2).unwrap();
    let sys = random_linear(g, false);
    let w = sample_brownian(g, 4000, 10).unwrap();
    let u = ControlProcess::zero(&g, 1);
    let mut o2 = opts();
    o2.regression.degree = 2;
    let a = solve_absde(&AdjointProblem::new(&sys, &u, &w, o2).unwrap()).unwrap();
    let b = solve_absde(&AdjointProblem::new(&sys, &u, &w, opts()).unwrap()).unwrap();
    for k in [0, 10] {
        let (ma, sa) = a.moments(false, 0, k);
        let (mb, _) = b.moments(false, 0, k);
        assert!((ma - mb).abs() < 3.0 * sa / (w.n_paths as f64).sqrt() + 1e-3, "{ma} vs {mb}");
    }
}

#[test]
fn csv_export_has_one_row_per_time() {
    let g = make_grid(0.0, 1.0, 10, 0.1).unwrap();
    let mut sys = DelaySystem::zero(g, Dims::new(1, 1));
    sys.terminal_cost = linear_terminal(sys.dims, &[(Arg::X, 1.0)]);
    let w = sample_brownian(g, 5, 1).unwrap();
    let prob = AdjointProblem::new(&sys, &ControlProcess::zero(&g, 1), &w, opts()).unwrap();
    let mut buf = Vec::new();
    solve_absde(&prob).unwrap().write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 12);
    assert!(text.starts_with("t,component,p_mean,p_std,q_mean,q_std"));
}
