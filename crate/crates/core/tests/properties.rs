use std::sync::Arc;

use proptest::prelude::*;
use xdelay::cost_opt::{cost_samples, evaluate_cost};
use xdelay::grid_rng::{make_grid, paired_ensembles, sample_brownian, BrownianEnsemble, TimeGrid};
use xdelay::kernels::{build_e1, build_e2, KernelSpec};
use xdelay::sdde_forward::{
    simulate, Arg, ControlProcess, DelaySystem, Dims, InitialPath, LinearCoefficients, QuadraticForm,
    ScalarCoefficient, VectorCoefficient,
};
use xdelay::svie_variation::{assemble_svie, linearize, simulate_svie, SvieOptions, VariationalSystem};

fn grid() -> TimeGrid {
    make_grid(0.0, 1.0, 20, 0.1).unwrap()
}

/// Scalar linear system with every memory channel switched on.
fn linear_system(g: TimeGrid, c: &[f64; 8], kernels: [f64; 4], curvature: f64) -> DelaySystem {
    let dims = Dims::new(1, 1);
    let mut b = LinearCoefficients::zeros(dims);
    let mut s = LinearCoefficients::zeros(dims);
    for (i, a) in Arg::ALL.into_iter().enumerate() {
        b = b.with(dims, a, c[i]);
        s = s.with(dims, a, 0.5 * c[7 - i]);
    }
    let mut sys = DelaySystem::zero(g, dims);
    sys.drift = if curvature == 0.0 {
        VectorCoefficient::Linear(b)
    } else {
        VectorCoefficient::QuadraticState {
            linear: b,
            curvature: vec![curvature],
        }
    };
    sys.diffusion = VectorCoefficient::Linear(s);
    sys.phi1 = KernelSpec::constant(kernels[0]);
    sys.psi1 = KernelSpec::constant(kernels[1]);
    sys.phi2 = KernelSpec::exponential(kernels[2], -1.0);
    sys.psi2 = KernelSpec::constant(kernels[3]);
    sys.xi = InitialPath::constant(0.7);
    sys.varsigma = InitialPath::constant(-0.3);
    let mut l = QuadraticForm::zeros(dims.args_len());
    l.weights[(0, 0)] = 1.0;
    l.weights[(4, 4)] = 1.0;
    sys.running_cost = ScalarCoefficient::Quadratic(l);
    let mut h = QuadraticForm::zeros(dims.state_len());
    h.linear[0] = 1.0;
    sys.terminal_cost = ScalarCoefficient::Quadratic(h);
    sys
}

fn coeffs() -> impl Strategy<Value = [f64; 8]> {
    prop::array::uniform8(-0.5f64..0.5)
}

fn kernel_values() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-0.5f64..0.5)
}

fn with_future_changed(w: &BrownianEnsemble, from: usize, shift: f64) -> BrownianEnsemble {
    let n = w.grid.n_steps;
    let mut inc = w.all_increments().to_vec();
    for p in 0..w.n_paths {
        for d in &mut inc[p * n + from..(p + 1) * n] {
            *d += shift;
        }
    }
    BrownianEnsemble::from_increments(w.grid, w.n_paths, w.seed, inc).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn brownian_samples_are_a_function_of_the_seed(seed in any::<u64>(), paths in 1usize..6, steps in 1usize..30) {
        let g = make_grid(0.0, 1.0, steps, 0.0).unwrap();
        let a = sample_brownian(g, paths, seed).unwrap();
        let b = sample_brownian(g, paths, seed).unwrap();
        prop_assert_eq!(a.all_increments(), b.all_increments());
        for p in 0..paths {
            let w = a.path_values(p);
            prop_assert_eq!(w[0], 0.0);
            prop_assert!((w[steps] - a.terminal_value(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn coarsening_keeps_the_brownian_path(seed in any::<u64>(), factor in 2usize..5) {
        let g = make_grid(0.0, 1.0, 12 * factor, 0.0).unwrap();
        let w = sample_brownian(g, 3, seed).unwrap();
        let c = w.coarsened(factor).unwrap();
        for p in 0..3 {
            let fine = w.path_values(p);
            let coarse = c.path_values(p);
            for (k, v) in coarse.iter().enumerate() {
                prop_assert!((v - fine[k * factor]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_kernel_e1_is_additive(c in -3.0f64..3.0, a in 0usize..=20, b in 0usize..=20, e in 0usize..=20) {
        let g = grid();
        let mut idx = [a, b, e];
        idx.sort_unstable();
        let [u, s, t] = idx;
        let e1 = build_e1(&KernelSpec::constant(c), &g, 1);
        let lhs = e1.scalar(t, s) + e1.scalar(s, u);
        prop_assert!((lhs - e1.scalar(t, u)).abs() <= 1e-12 * (1.0 + c.abs()));
    }

    #[test]
    fn states_do_not_see_future_noise(c in coeffs(), kv in kernel_values(), k in 1usize..20, seed in any::<u64>()) {
        let g = grid();
        let sys = linear_system(g, &c, kv, 0.2);
        let u = ControlProcess::from_fn(&g, |t| (2.0 * t).cos());
        let w = sample_brownian(g, 3, seed).unwrap();
        let moved = with_future_changed(&w, k, 0.3);
        let a = simulate(&sys, &u, &w).unwrap();
        let b = simulate(&sys, &u, &moved).unwrap();
        for p in 0..3 {
            for j in 0..=k {
                prop_assert_eq!(a.x(p, j), b.x(p, j));
                prop_assert_eq!(a.get(Arg::Kappa, p, j), b.get(Arg::Kappa, p, j));
            }
        }
    }

    #[test]
    fn initial_path_and_delayed_state(c in coeffs(), kv in kernel_values(), seed in any::<u64>()) {
        let g = grid();
        let sys = linear_system(g, &c, kv, 0.0);
        let u = ControlProcess::from_fn(&g, |t| 1.0 - t);
        let w = sample_brownian(g, 2, seed).unwrap();
        let tr = simulate(&sys, &u, &w).unwrap();
        let d = g.delay_steps;
        for p in 0..2 {
            prop_assert_eq!(tr.x(p, 0), &[0.7][..]);
            for k in 0..=g.n_steps {
                let y = tr.get(Arg::Y, p, k)[0];
                let mu = tr.get(Arg::Mu, p, k)[0];
                if k < d {
                    prop_assert_eq!(y, 0.7);
                    prop_assert_eq!(mu, -0.3);
                } else {
                    prop_assert_eq!(y, tr.x(p, k - d)[0]);
                    prop_assert_eq!(mu, u.at(p, k - d)[0]);
                }
            }
        }
    }

    #[test]
    fn svie_rows_match_their_definitions(c in coeffs(), kv in kernel_values(), seed in any::<u64>()) {
        let g = grid();
        let sys = linear_system(g, &c, kv, 0.0);
        let u = ControlProcess::zero(&g, 1);
        let v = ControlProcess::from_fn(&g, |t| 1.0 + t);
        let w = sample_brownian(g, 3, seed).unwrap();
        let lin = linearize(&sys, &simulate(&sys, &u, &w).unwrap()).unwrap();
        let vs = VariationalSystem::new(sys.clone(), Arc::new(lin), v).unwrap();
        let svie = assemble_svie(&vs, build_e1(&sys.phi1, &g, 1), build_e2(&sys.psi1, &w, 1), SvieOptions::default()).unwrap();
        let x = simulate_svie(&svie, &w).unwrap();
        let d = g.delay_steps;
        for p in 0..3 {
            for k in 0..=g.n_steps {
                let xk = |j: usize| x.component(0, p, j)[0];
                let y = x.component(1, p, k)[0];
                let expected_y = if k >= d { xk(k - d) } else { 0.0 };
                prop_assert!((y - expected_y).abs() <= 1e-10 * (1.0 + expected_y.abs()));
                let z = x.component(2, p, k)[0];
                let expected_z: f64 = (0..k).map(|j| sys.phi1.eval_grid_scalar(&g, k, j) * xk(j) * g.dt).sum();
                prop_assert!((z - expected_z).abs() <= 1e-10 * (1.0 + expected_z.abs()));
            }
        }
    }

    #[test]
    fn identical_controls_cost_the_same_on_paired_noise(c in coeffs(), kv in kernel_values(), seed in any::<u64>()) {
        let g = grid();
        let sys = linear_system(g, &c, kv, 0.1);
        let u = ControlProcess::from_fn(&g, |t| t.sin());
        let w = sample_brownian(g, 5, seed).unwrap();
        let twin = paired_ensembles(&w);
        let a = evaluate_cost(&sys, &u, &w).unwrap();
        let b = evaluate_cost(&sys, &u, &twin).unwrap();
        prop_assert_eq!(a.mean - b.mean, 0.0);
        let sa = cost_samples(&sys, &simulate(&sys, &u, &w).unwrap()).unwrap();
        let sb = cost_samples(&sys, &simulate(&sys, &u, &twin).unwrap()).unwrap();
        prop_assert_eq!(sa, sb);
    }
}
