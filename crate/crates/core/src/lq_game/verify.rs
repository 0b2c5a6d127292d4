use std::f64::consts::PI;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::LqSpec;
use crate::cost_opt::cost_samples;
use crate::error::{Error, Result};
use crate::grid_rng::{BrownianEnsemble, TimeGrid};
use crate::sdde_forward::{simulate, ControlProcess, DelaySystem};
use crate::stats::{mean_var, McEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    pub directions: usize,
    pub rhos: Vec<f64>,
    pub sigmas: f64,
    /// Seed of the random direction bank, independent of the noise seed.
    pub direction_seed: u64,
    /// Discretization allowance on the fitted minimizer, in units of `dt`.
    pub rho_star_budget: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            directions: 20,
            rhos: vec![-0.2, -0.1, -0.05, 0.05, 0.1, 0.2],
            sigmas: 3.0,
            direction_seed: 7,
            rho_star_budget: 2.0,
        }
    }
}

impl VerifyOptions {
    pub fn validate(&self) -> Result<()> {
        if self.directions == 0 {
            return Err(Error::config("directions", "need at least one direction"));
        }
        if self.rhos.len() < 2 || self.rhos.iter().any(|r| *r == 0.0 || !r.is_finite()) {
            return Err(Error::config("rhos", "need at least two finite nonzero perturbation sizes"));
        }
        if !(self.sigmas > 0.0) || !(self.rho_star_budget >= 0.0) {
            return Err(Error::config("sigmas", "tolerances must be positive"));
        }
        Ok(())
    }
}

/// Smooth random directions `v(t) = Σ a_i b_i(s)`, `s = (t − t0)/(T − t0)`, with
/// `b ∈ {1, cos πs, sin πs, cos 2πs, sin 2πs}`, `a_i ~ N(0, 1)` and `Σ_k |v_k|² dt = 1`.
pub fn direction_bank(grid: &TimeGrid, width: usize, count: usize, seed: u64) -> Result<Vec<ControlProcess>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = |s: f64| [1.0, (PI * s).cos(), (PI * s).sin(), (2.0 * PI * s).cos(), (2.0 * PI * s).sin()];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let coef: Vec<[f64; 5]> = (0..width)
            .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng)))
            .collect();
        let raw = |t: f64| -> Vec<f64> {
            let b = basis((t - grid.t0) / grid.horizon());
            coef.iter().map(|a| a.iter().zip(&b).map(|(x, y)| x * y).sum()).collect()
        };
        let norm: f64 = (0..grid.n_steps)
            .map(|k| raw(grid.t(k)).iter().map(|v| v * v).sum::<f64>() * grid.dt)
            .sum::<f64>()
            .sqrt();
        out.push(ControlProcess::open_loop(grid, width, |_, t| {
            raw(t).into_iter().map(|v| v / norm).collect()
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEntry {
    pub direction: usize,
    pub rho: f64,
    pub cost: McEstimate,
    /// Paired `J(candidate + ρv) − J(candidate)`.
    pub delta: McEstimate,
    pub violation: bool,
}

/// Fit of `J(candidate + ρv) − J(candidate) ≈ slope·ρ + curvature·ρ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionFit {
    pub direction: usize,
    pub slope: McEstimate,
    pub curvature: McEstimate,
    /// `−slope / (2·curvature)`; absent when the fit is flat or opens the wrong way.
    pub rho_star: Option<f64>,
    pub rho_star_std_err: Option<f64>,
    pub tolerance: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub base: McEstimate,
    pub entries: Vec<PerturbationEntry>,
    pub fits: Vec<DirectionFit>,
    pub violations: usize,
}

impl OptimalityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.fits.iter().all(|f| f.within)
    }

    pub fn max_abs_rho_star(&self) -> f64 {
        self.fits
            .iter()
            .filter_map(|f| f.rho_star)
            .fold(0.0, |a, r| a.max(r.abs()))
    }

    /// Rows `(direction, rho, j_mean, j_stderr)`, with the unperturbed cost at `rho = 0`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["direction", "rho", "j_mean", "j_stderr"])?;
        for f in &self.fits {
            let mut rows: Vec<(f64, McEstimate)> = vec![(0.0, self.base)];
            rows.extend(
                self.entries
                    .iter()
                    .filter(|e| e.direction == f.direction)
                    .map(|e| (e.rho, e.cost)),
            );
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (rho, c) in rows {
                wr.write_record(&[
                    f.direction.to_string(),
                    rho.to_string(),
                    c.mean.to_string(),
                    c.std_err.to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Optimality test of `candidate` for `spec` over a random direction bank.
pub fn lq_verify_optimality(
    spec: &LqSpec,
    candidate: &ControlProcess,
    w: &BrownianEnsemble,
    opts: &VerifyOptions,
) -> Result<OptimalityReport> {
    let sys = spec.build_system()?;
    let bank = direction_bank(&spec.grid, 1, opts.directions, opts.direction_seed)?;
    unilateral_check(&sys, candidate, 0, &bank, w, opts)
}

/// Perturbs components `offset..offset + width` of `candidate` along each direction of `bank`
/// (each `width`-dimensional) and compares costs on the shared noise of `w`.
///
/// A move is a violation when it improves the oriented cost by more than `sigmas` paired
/// standard errors. The parabola through the perturbed costs must open in the preferred
/// direction with its vertex within `sigmas·SE + rho_star_budget·dt` of zero.
pub fn unilateral_check(
    sys: &DelaySystem,
    candidate: &ControlProcess,
    offset: usize,
    bank: &[ControlProcess],
    w: &BrownianEnsemble,
    opts: &VerifyOptions,
) -> Result<OptimalityReport> {
    opts.validate()?;
    let sign = sys.orientation.sign();
    let base_samples = cost_samples(sys, &simulate(sys, candidate, w)?)?;
    let base = McEstimate::from_samples(&base_samples, w.seed);
    let floor = 1e-10 * (1.0 + base.mean.abs());
    let np = w.n_paths;
    let rhos = &opts.rhos;
    let (s2, s3, s4) = rhos.iter().fold((0.0, 0.0, 0.0), |(a, b, c), r| {
        (a + r * r, b + r * r * r, c + r * r * r * r)
    });
    let det = s2 * s4 - s3 * s3;
    let mut entries = Vec::new();
    let mut fits = Vec::new();
    for (di, v) in bank.iter().enumerate() {
        let full = v.embed(&ControlProcess::zero(&sys.grid, sys.dims.m), offset)?;
        let mut deltas: Vec<Vec<f64>> = Vec::with_capacity(rhos.len());
        for &rho in rhos {
            let samples = cost_samples(sys, &simulate(sys, &candidate.plus_scaled(&full, rho)?, w)?)?;
            let d: Vec<f64> = samples.iter().zip(&base_samples).map(|(a, b)| a - b).collect();
            let delta = McEstimate::from_samples(&d, w.seed);
            entries.push(PerturbationEntry {
                direction: di,
                rho,
                cost: McEstimate::from_samples(&samples, w.seed),
                delta,
                violation: sign * delta.mean < -(opts.sigmas * delta.std_err + floor),
            });
            deltas.push(d);
        }
        let mut a = vec![0.0; np];
        let mut b = vec![0.0; np];
        for p in 0..np {
            let (m1, m2) = rhos.iter().zip(&deltas).fold((0.0, 0.0), |(x, y), (r, d)| {
                (x + r * d[p], y + r * r * d[p])
            });
            a[p] = (s4 * m1 - s3 * m2) / det;
            b[p] = (s2 * m2 - s3 * m1) / det;
        }
        let slope = McEstimate::from_samples(&a, w.seed);
        let curvature = McEstimate::from_samples(&b, w.seed);
        let bias = opts.rho_star_budget * sys.grid.dt;
        let fit = if sign * curvature.mean > floor {
            let rs = -slope.mean / (2.0 * curvature.mean);
            let infl: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(ap, bp)| -(ap - slope.mean) / (2.0 * curvature.mean) - rs * (bp - curvature.mean) / curvature.mean)
                .collect();
            let se = (mean_var(&infl).1 / np as f64).sqrt();
            let tolerance = opts.sigmas * se + bias;
            DirectionFit {
                direction: di,
                slope,
                curvature,
                rho_star: Some(rs),
                rho_star_std_err: Some(se),
                tolerance,
                within: rs.abs() <= tolerance,
            }
        } else {
            // Flat or wrongly curved: acceptable only when no slope is detectable either.
            let tolerance = opts.sigmas * slope.std_err + floor;
            DirectionFit {
                direction: di,
                slope,
                curvature,
                rho_star: None,
                rho_star_std_err: None,
                tolerance,
                within: sign * curvature.mean >= -floor && slope.mean.abs() <= tolerance,
            }
        };
        fits.push(fit);
    }
    let violations = entries.iter().filter(|e| e.violation).count();
    Ok(OptimalityReport {
        base,
        entries,
        fits,
        violations,
    })
}
