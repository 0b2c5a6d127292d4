use std::io::Write;

use rayon::prelude::*;

use super::control::ControlProcess;
use super::system::{Arg, DelaySystem, Dims, InitialPath};
use crate::error::{Error, Result};
use crate::grid_rng::{BrownianEnsemble, TimeGrid};
use crate::kernels::KernelSpec;

/// Per-path state and memory processes on grid indices `0..=n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub grid: TimeGrid,
    pub dims: Dims,
    pub n_paths: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub kappa: Vec<f64>,
    pub u: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl Trajectories {
    fn slot(&self, arg: Arg) -> &[f64] {
        match arg {
            Arg::X => &self.x,
            Arg::Y => &self.y,
            Arg::Z => &self.z,
            Arg::Kappa => &self.kappa,
            Arg::U => &self.u,
            Arg::Mu => &self.mu,
            Arg::Nu => &self.nu,
            Arg::Lambda => &self.lambda,
        }
    }

    /// Value of one argument at `(path, k)`.
    #[inline]
    pub fn get(&self, arg: Arg, path: usize, k: usize) -> &[f64] {
        let w = self.dims.width(arg);
        let o = (path * (self.grid.n_steps + 1) + k) * w;
        &self.slot(arg)[o..o + w]
    }

    #[inline]
    pub fn x(&self, path: usize, k: usize) -> &[f64] {
        self.get(Arg::X, path, k)
    }

    /// Stacked argument vector `(x, y, z, κ, u, μ, ν, λ)` at `(path, k)`.
    pub fn args(&self, path: usize, k: usize, out: &mut [f64]) {
        for a in Arg::ALL {
            out[self.dims.range(a)].copy_from_slice(self.get(a, path, k));
        }
    }

    /// `(x, y, z, κ)` at `(path, k)`.
    pub fn state_args(&self, path: usize, k: usize, out: &mut [f64]) {
        for a in Arg::STATE {
            out[self.dims.range(a)].copy_from_slice(self.get(a, path, k));
        }
    }

    /// Writes the long table `(path, k, t, x, y, z, kappa, u, mu, nu, lambda)`; vector
    /// components get `_i` suffixes when the dimension exceeds one.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["path".to_string(), "k".into(), "t".into()];
        for a in Arg::ALL {
            let w = self.dims.width(a);
            if w == 1 {
                header.push(a.name().into());
            } else {
                header.extend((0..w).map(|i| format!("{}_{i}", a.name())));
            }
        }
        wtr.write_record(&header)?;
        for p in 0..self.n_paths {
            for k in 0..=self.grid.n_steps {
                let mut rec = vec![p.to_string(), k.to_string(), format_num(self.grid.t(k))];
                for a in Arg::ALL {
                    rec.extend(self.get(a, p, k).iter().map(|v| format_num(*v)));
                }
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn format_num(v: f64) -> String {
    format!("{v:e}")
}

/// Drift and diffusion evaluation, possibly path- and step-dependent.
pub(crate) trait Coefficients: Sync {
    fn eval(&self, path: usize, k: usize, t: f64, args: &[f64], drift: &mut [f64], diffusion: &mut [f64]);
}

impl Coefficients for DelaySystem {
    fn eval(&self, _path: usize, _k: usize, t: f64, args: &[f64], drift: &mut [f64], diffusion: &mut [f64]) {
        self.drift.eval(t, args, drift);
        self.diffusion.eval(t, args, diffusion);
    }
}

/// Kernels and initial segments shared by the forward schemes.
pub(crate) struct ForwardParts<'a> {
    pub grid: TimeGrid,
    pub dims: Dims,
    pub phi1: &'a KernelSpec,
    pub psi1: &'a KernelSpec,
    pub phi2: &'a KernelSpec,
    pub psi2: &'a KernelSpec,
    pub xi: &'a InitialPath,
    pub varsigma: &'a InitialPath,
}

impl<'a> ForwardParts<'a> {
    pub fn of(sys: &'a DelaySystem) -> Self {
        ForwardParts {
            grid: sys.grid,
            dims: sys.dims,
            phi1: &sys.phi1,
            psi1: &sys.psi1,
            phi2: &sys.phi2,
            psi2: &sys.psi2,
            xi: &sys.xi,
            varsigma: &sys.varsigma,
        }
    }
}

pub(crate) struct PathData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub kappa: Vec<f64>,
    pub u: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// `(u, μ, ν, λ)` along one path.
pub(crate) fn control_memories(parts: &ForwardParts, u: &ControlProcess, path: usize, dw: &[f64]) -> [Vec<f64>; 4] {
    let g = &parts.grid;
    let m = parts.dims.m;
    let n = g.n_steps;
    let d = g.delay_steps;
    let mut uu = vec![0.0; (n + 1) * m];
    let mut mu = vec![0.0; (n + 1) * m];
    let mut nu = vec![0.0; (n + 1) * m];
    let mut la = vec![0.0; (n + 1) * m];
    let mut acc_nu = parts.phi2.accumulator(g, m);
    let mut acc_la = parts.psi2.accumulator(g, m);
    for k in 0..=n {
        let uk = u.at(path, k);
        uu[k * m..(k + 1) * m].copy_from_slice(uk);
        let delayed = if k >= d {
            u.at(path, k - d)
        } else {
            parts.varsigma.at(g, k as isize - d as isize)
        };
        mu[k * m..(k + 1) * m].copy_from_slice(delayed);
        acc_nu.value(&mut nu[k * m..(k + 1) * m]);
        acc_la.value(&mut la[k * m..(k + 1) * m]);
        if k < n {
            acc_nu.push(uk, g.dt);
            acc_la.push(uk, dw[k]);
        }
    }
    [uu, mu, nu, la]
}

/// `(y, z, κ)` of a given state path.
pub(crate) fn state_memories(parts: &ForwardParts, x: &[f64], dw: &[f64]) -> [Vec<f64>; 3] {
    let g = &parts.grid;
    let n_dim = parts.dims.n;
    let n = g.n_steps;
    let d = g.delay_steps;
    let mut y = vec![0.0; (n + 1) * n_dim];
    let mut z = vec![0.0; (n + 1) * n_dim];
    let mut ka = vec![0.0; (n + 1) * n_dim];
    let mut acc_z = parts.phi1.accumulator(g, n_dim);
    let mut acc_k = parts.psi1.accumulator(g, n_dim);
    for k in 0..=n {
        let delayed = if k >= d {
            &x[(k - d) * n_dim..(k - d + 1) * n_dim]
        } else {
            parts.xi.at(g, k as isize - d as isize)
        };
        y[k * n_dim..(k + 1) * n_dim].copy_from_slice(delayed);
        acc_z.value(&mut z[k * n_dim..(k + 1) * n_dim]);
        acc_k.value(&mut ka[k * n_dim..(k + 1) * n_dim]);
        if k < n {
            let xk = &x[k * n_dim..(k + 1) * n_dim];
            acc_z.push(xk, g.dt);
            acc_k.push(xk, dw[k]);
        }
    }
    [y, z, ka]
}

fn simulate_path(
    parts: &ForwardParts,
    coef: &dyn Coefficients,
    u: &ControlProcess,
    path: usize,
    dw: &[f64],
) -> Result<PathData> {
    let g = &parts.grid;
    let dims = parts.dims;
    let (nd, m) = (dims.n, dims.m);
    let n = g.n_steps;
    let d = g.delay_steps;
    let [uu, mu, nu, la] = control_memories(parts, u, path, dw);
    let mut x = vec![0.0; (n + 1) * nd];
    let mut y = vec![0.0; (n + 1) * nd];
    let mut z = vec![0.0; (n + 1) * nd];
    let mut ka = vec![0.0; (n + 1) * nd];
    x[..nd].copy_from_slice(parts.xi.at(g, 0));
    let mut acc_z = parts.phi1.accumulator(g, nd);
    let mut acc_k = parts.psi1.accumulator(g, nd);
    let mut args = vec![0.0; dims.args_len()];
    let mut b = vec![0.0; nd];
    let mut s = vec![0.0; nd];
    for k in 0..=n {
        let r = k * nd..(k + 1) * nd;
        let delayed: Vec<f64> = if k >= d {
            x[(k - d) * nd..(k - d + 1) * nd].to_vec()
        } else {
            parts.xi.at(g, k as isize - d as isize).to_vec()
        };
        y[r.clone()].copy_from_slice(&delayed);
        acc_z.value(&mut z[r.clone()]);
        acc_k.value(&mut ka[r.clone()]);
        if k == n {
            break;
        }
        let rc = k * m..(k + 1) * m;
        args[dims.range(Arg::X)].copy_from_slice(&x[r.clone()]);
        args[dims.range(Arg::Y)].copy_from_slice(&y[r.clone()]);
        args[dims.range(Arg::Z)].copy_from_slice(&z[r.clone()]);
        args[dims.range(Arg::Kappa)].copy_from_slice(&ka[r.clone()]);
        args[dims.range(Arg::U)].copy_from_slice(&uu[rc.clone()]);
        args[dims.range(Arg::Mu)].copy_from_slice(&mu[rc.clone()]);
        args[dims.range(Arg::Nu)].copy_from_slice(&nu[rc.clone()]);
        args[dims.range(Arg::Lambda)].copy_from_slice(&la[rc]);
        coef.eval(path, k, g.t(k), &args, &mut b, &mut s);
        for i in 0..nd {
            let next = x[k * nd + i] + b[i] * g.dt + s[i] * dw[k];
            if !next.is_finite() {
                return Err(Error::NonFinite {
                    context: "forward simulation",
                    path,
                    step: k + 1,
                });
            }
            x[(k + 1) * nd + i] = next;
        }
        let xk = x[r].to_vec();
        acc_z.push(&xk, g.dt);
        acc_k.push(&xk, dw[k]);
    }
    Ok(PathData {
        x,
        y,
        z,
        kappa: ka,
        u: uu,
        mu,
        nu,
        lambda: la,
    })
}

pub(crate) fn check_control(u: &ControlProcess, dims: Dims, w: &BrownianEnsemble) -> Result<()> {
    if u.m != dims.m {
        return Err(Error::InvalidInput(format!("control has {} components, system expects {}", u.m, dims.m)));
    }
    if u.n_steps != w.grid.n_steps {
        return Err(Error::InvalidInput("control and noise live on different grids".into()));
    }
    if let Some(p) = u.n_paths() {
        if p != w.n_paths {
            return Err(Error::InvalidInput("path-indexed control does not match the ensemble size".into()));
        }
    }
    Ok(())
}

pub(crate) fn assemble(grid: TimeGrid, dims: Dims, paths: Vec<PathData>) -> Trajectories {
    let n_paths = paths.len();
    let mut t = Trajectories {
        grid,
        dims,
        n_paths,
        x: Vec::new(),
        y: Vec::new(),
        z: Vec::new(),
        kappa: Vec::new(),
        u: Vec::new(),
        mu: Vec::new(),
        nu: Vec::new(),
        lambda: Vec::new(),
    };
    let cap_n = n_paths * (grid.n_steps + 1) * dims.n;
    let cap_m = n_paths * (grid.n_steps + 1) * dims.m;
    for v in [&mut t.x, &mut t.y, &mut t.z, &mut t.kappa] {
        v.reserve_exact(cap_n);
    }
    for v in [&mut t.u, &mut t.mu, &mut t.nu, &mut t.lambda] {
        v.reserve_exact(cap_m);
    }
    for p in paths {
        t.x.extend(p.x);
        t.y.extend(p.y);
        t.z.extend(p.z);
        t.kappa.extend(p.kappa);
        t.u.extend(p.u);
        t.mu.extend(p.mu);
        t.nu.extend(p.nu);
        t.lambda.extend(p.lambda);
    }
    t
}

pub(crate) fn run_forward(
    parts: &ForwardParts,
    coef: &dyn Coefficients,
    u: &ControlProcess,
    w: &BrownianEnsemble,
) -> Result<Trajectories> {
    check_control(u, parts.dims, w)?;
    if w.grid.n_steps != parts.grid.n_steps || w.grid.delay_steps != parts.grid.delay_steps {
        return Err(Error::InvalidInput("system grid and noise grid differ".into()));
    }
    let paths: Result<Vec<PathData>> = (0..w.n_paths)
        .into_par_iter()
        .map(|p| simulate_path(parts, coef, u, p, w.increments(p)))
        .collect();
    Ok(assemble(parts.grid, parts.dims, paths?))
}

/// Euler–Maruyama with left-point memory sums.
pub fn simulate(sys: &DelaySystem, u: &ControlProcess, w: &BrownianEnsemble) -> Result<Trajectories> {
    run_forward(&ForwardParts::of(sys), sys, u, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_rng::{make_grid, sample_brownian};
    use crate::sdde_forward::system::{LinearCoefficients, VectorCoefficient};

    fn gbm(grid: TimeGrid) -> DelaySystem {
        let dims = Dims::new(1, 1);
        let mut sys = DelaySystem::zero(grid, dims);
        sys.drift = VectorCoefficient::Linear(LinearCoefficients::zeros(dims).with(dims, Arg::X, 0.05));
        sys.diffusion = VectorCoefficient::Linear(LinearCoefficients::zeros(dims).with(dims, Arg::X, 0.2));
        sys.xi = InitialPath::constant(1.0);
        sys
    }

    #[test]
    fn zero_dynamics_keep_initial_value() {
        let g = make_grid(0.0, 1.0, 20, 0.1).unwrap();
        let mut sys = DelaySystem::zero(g, Dims::new(1, 1));
        sys.xi = InitialPath::constant(2.5);
        let w = sample_brownian(g, 5, 1).unwrap();
        let tr = simulate(&sys, &ControlProcess::zero(&g, 1), &w).unwrap();
        assert!(tr.x.iter().all(|v| *v == 2.5));
        assert!(tr.y.iter().all(|v| *v == 2.5));
    }

    #[test]
    fn gbm_mean_matches_exact_solution() {
        let g = make_grid(0.0, 1.0, 100, 0.0).unwrap();
        let m = 100_000;
        let w = sample_brownian(g, m, 21).unwrap();
        let tr = simulate(&gbm(g), &ControlProcess::zero(&g, 1), &w).unwrap();
        let xt: Vec<f64> = (0..m).map(|p| tr.x(p, 100)[0]).collect();
        let mean = xt.iter().sum::<f64>() / m as f64;
        let sd = (xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0)).sqrt();
        // Euler preserves the mean of a linear SDE up to (1 + a·dt)^N versus e^{aT}: 1.2e-5 here.
        assert!((mean - 0.05f64.exp()).abs() <= 3.0 * sd / (m as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn gbm_strong_order_half() {
        let fine = make_grid(0.0, 1.0, 200, 0.0).unwrap();
        let m = 4000;
        let w = sample_brownian(fine, m, 3).unwrap();
        let a: f64 = 0.05;
        let s: f64 = 0.2;
        let mut errs = vec![];
        let mut dts = vec![];
        for factor in [4, 2, 1] {
            let wc = w.coarsened(factor).unwrap();
            let sys = gbm(wc.grid);
            let tr = simulate(&sys, &ControlProcess::zero(&wc.grid, 1), &wc).unwrap();
            let mut e2 = 0.0;
            for p in 0..m {
                let wt = wc.terminal_value(p);
                let exact = ((a - 0.5 * s * s) + s * wt).exp();
                e2 += (tr.x(p, wc.grid.n_steps)[0] - exact).powi(2);
            }
            errs.push((e2 / m as f64).sqrt());
            dts.push(wc.grid.dt);
        }
        let slope = crate::stats::fitted_order(&dts, &errs);
        assert!((0.35..=0.65).contains(&slope), "slope {slope}");
    }

    #[test]
    fn distributed_control_delay_double_integral() {
        // b = ν with φ2 = 1 and u ≡ 1: x(T) = x(0) + Σ_k (t_k − t0)·dt, the left-rectangle
        // value of (T−t0)²/2.
        let g = make_grid(0.0, 1.0, 200, 0.1).unwrap();
        let dims = Dims::new(1, 1);
        let mut sys = DelaySystem::zero(g, dims);
        sys.drift = VectorCoefficient::Linear(LinearCoefficients::zeros(dims).with(dims, Arg::Nu, 1.0));
        sys.phi2 = KernelSpec::constant(1.0);
        sys.xi = InitialPath::constant(0.5);
        let w = sample_brownian(g, 2, 1).unwrap();
        let tr = simulate(&sys, &ControlProcess::constant(&g, &[1.0]), &w).unwrap();
        let xt = tr.x(0, 200)[0];
        let grid_sum: f64 = (0..200).map(|k| (g.t(k) - g.t0) * g.dt).sum();
        assert!((xt - 0.5 - grid_sum).abs() < 1e-12);
        assert!((xt - 0.5 - 0.5).abs() <= g.dt);
    }

    #[test]
    fn memory_invariants_hold() {
        let g = make_grid(0.0, 1.0, 30, 0.1).unwrap();
        let dims = Dims::new(1, 1);
        let mut sys = DelaySystem::zero(g, dims);
        let lin = LinearCoefficients::zeros(dims)
            .with(dims, Arg::X, -0.3)
            .with(dims, Arg::Y, 0.2)
            .with(dims, Arg::Z, 0.1)
            .with(dims, Arg::Kappa, 0.4)
            .with(dims, Arg::U, 1.0)
            .with(dims, Arg::Nu, 0.5);
        sys.drift = VectorCoefficient::Linear(lin.clone());
        sys.diffusion = VectorCoefficient::Linear(lin.with(dims, Arg::X, 0.3));
        sys.phi1 = KernelSpec::exponential(0.8, -1.0);
        sys.psi1 = KernelSpec::constant(0.6);
        sys.phi2 = KernelSpec::windowed(crate::kernels::KernelForm::Constant { c: 1.0 }, 0.1, Default::default());
        sys.psi2 = KernelSpec::constant(0.3);
        sys.xi = InitialPath::Tabulated((0..=3).map(|i| vec![1.0 + i as f64]).collect());
        sys.varsigma = InitialPath::constant(-1.0);
        let w = sample_brownian(g, 3, 2).unwrap();
        let u = ControlProcess::from_fn(&g, |t| (3.0 * t).sin());
        let tr = simulate(&sys, &u, &w).unwrap();
        let d = g.delay_steps;
        for p in 0..3 {
            let dw = w.increments(p);
            assert_eq!(tr.x(p, 0)[0], 4.0);
            for k in 0..=g.n_steps {
                let y = tr.get(Arg::Y, p, k)[0];
                let expect_y = if k >= d { tr.x(p, k - d)[0] } else { 1.0 + k as f64 };
                assert_eq!(y, expect_y);
                let z: f64 = (0..k).map(|j| sys.phi1.eval_grid_scalar(&g, k, j) * tr.x(p, j)[0] * g.dt).sum();
                let ka: f64 = (0..k).map(|j| sys.psi1.eval_grid_scalar(&g, k, j) * tr.x(p, j)[0] * dw[j]).sum();
                let nu: f64 = (0..k).map(|j| sys.phi2.eval_grid_scalar(&g, k, j) * u.at(p, j)[0] * g.dt).sum();
                let la: f64 = (0..k).map(|j| sys.psi2.eval_grid_scalar(&g, k, j) * u.at(p, j)[0] * dw[j]).sum();
                assert!((tr.get(Arg::Z, p, k)[0] - z).abs() < 1e-12);
                assert!((tr.get(Arg::Kappa, p, k)[0] - ka).abs() < 1e-12);
                assert!((tr.get(Arg::Nu, p, k)[0] - nu).abs() < 1e-12);
                assert!((tr.get(Arg::Lambda, p, k)[0] - la).abs() < 1e-12);
                let mu = tr.get(Arg::Mu, p, k)[0];
                let expect_mu = if k >= d { u.at(p, k - d)[0] } else { -1.0 };
                assert_eq!(mu, expect_mu);
            }
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let g = make_grid(0.0, 1.0, 50, 0.0).unwrap();
        let dims = Dims::new(1, 1);
        let mut sys = DelaySystem::zero(g, dims);
        sys.drift = VectorCoefficient::Linear(LinearCoefficients::zeros(dims).with(dims, Arg::X, 1e300));
        sys.xi = InitialPath::constant(1e10);
        let w = sample_brownian(g, 2, 1).unwrap();
        assert!(matches!(
            simulate(&sys, &ControlProcess::zero(&g, 1), &w),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn csv_columns() {
        let g = make_grid(0.0, 1.0, 2, 0.0).unwrap();
        let sys = gbm(g);
        let w = sample_brownian(g, 1, 1).unwrap();
        let tr = simulate(&sys, &ControlProcess::zero(&g, 1), &w).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("path,k,t,x,y,z,kappa,u,mu,nu,lambda\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
