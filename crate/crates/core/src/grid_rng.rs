//! Uniform time grids, seeded Brownian increments and common-random-number sharing.
//!
//! Every path draws from its own ChaCha stream (`seed`, stream = path index), so the
//! ensemble is a pure function of `(grid, n_paths, seed)` whatever the thread schedule.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t_k = t0 + k·dt`, `k = 0..=n_steps`, with the point delay as an index shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
    pub dt: f64,
    pub delay_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize, delta: f64) -> Result<Self> {
        if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidHorizon { t0, t_end });
        }
        if n_steps == 0 {
            return Err(Error::InvalidInput("n_steps must be at least 1".into()));
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidInput(format!("delay must be nonnegative, got {delta}")));
        }
        let dt = (t_end - t0) / n_steps as f64;
        let ratio = (delta / dt).round();
        if (delta - ratio * dt).abs() > 1e-12 * (t_end - t0) {
            return Err(Error::NonCommensurateDelay { delta, dt });
        }
        Ok(TimeGrid {
            t0,
            t_end,
            n_steps,
            dt,
            delay_steps: ratio as usize,
        })
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Time of a possibly negative index, used for the initial segment on `[t0−δ, t0]`.
    #[inline]
    pub fn t_signed(&self, k: isize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn delta(&self) -> f64 {
        self.delay_steps as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.t_end - self.t0
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.t(k)).collect()
    }

    /// Grid with `n_steps / factor` steps over the same horizon and delay.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(Error::InvalidInput(format!(
                "coarsening factor {factor} does not divide {} steps",
                self.n_steps
            )));
        }
        TimeGrid::new(self.t0, self.t_end, self.n_steps / factor, self.delta())
    }
}

pub fn make_grid(t0: f64, t_end: f64, n_steps: usize, delta: f64) -> Result<TimeGrid> {
    TimeGrid::new(t0, t_end, n_steps, delta)
}

/// `n_paths × n_steps` Brownian increments, row-major by path.
///
/// Cloning shares the increment buffer; [`paired_ensembles`] is the named form of that
/// for common-random-number comparisons.
#[derive(Debug, Clone)]
pub struct BrownianEnsemble {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    increments: Arc<[f64]>,
}

impl BrownianEnsemble {
    pub fn from_increments(grid: TimeGrid, n_paths: usize, seed: u64, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != n_paths * grid.n_steps {
            return Err(Error::InvalidInput(format!(
                "expected {} increments, got {}",
                n_paths * grid.n_steps,
                increments.len()
            )));
        }
        if n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be at least 1".into()));
        }
        Ok(BrownianEnsemble {
            grid,
            n_paths,
            seed,
            increments: increments.into(),
        })
    }

    #[inline]
    pub fn increments(&self, path: usize) -> &[f64] {
        let n = self.grid.n_steps;
        &self.increments[path * n..(path + 1) * n]
    }

    #[inline]
    pub fn dw(&self, path: usize, k: usize) -> f64 {
        self.increments[path * self.grid.n_steps + k]
    }

    pub fn all_increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(t_k) − W(t0)` for `k = 0..=n_steps`.
    pub fn path_values(&self, path: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.grid.n_steps + 1);
        let mut acc = 0.0;
        w.push(0.0);
        for &d in self.increments(path) {
            acc += d;
            w.push(acc);
        }
        w
    }

    pub fn terminal_value(&self, path: usize) -> f64 {
        self.increments(path).iter().sum()
    }

    pub fn shares_noise_with(&self, other: &BrownianEnsemble) -> bool {
        Arc::ptr_eq(&self.increments, &other.increments)
    }

    /// The same Brownian paths seen on a grid `factor` times coarser.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsened(factor)?;
        let fine = self.grid.n_steps;
        let mut inc = Vec::with_capacity(self.n_paths * grid.n_steps);
        for p in 0..self.n_paths {
            let row = &self.increments[p * fine..(p + 1) * fine];
            inc.extend(row.chunks(factor).map(|c| c.iter().sum::<f64>()));
        }
        BrownianEnsemble::from_increments(grid, self.n_paths, self.seed, inc)
    }

    /// Sample mean and variance of all increments.
    pub fn increment_moments(&self) -> (f64, f64) {
        let n = self.increments.len() as f64;
        let mean = self.increments.iter().sum::<f64>() / n;
        let var = self.increments.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }
}

fn path_stream(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

pub fn sample_brownian(grid: TimeGrid, n_paths: usize, seed: u64) -> Result<BrownianEnsemble> {
    if n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be at least 1".into()));
    }
    let n = grid.n_steps;
    let sd = grid.dt.sqrt();
    let mut inc = vec![0.0; n_paths * n];
    inc.par_chunks_mut(n).enumerate().for_each(|(p, row)| {
        let mut rng = path_stream(seed, p);
        for d in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *d = sd * z;
        }
    });
    BrownianEnsemble::from_increments(grid, n_paths, seed, inc)
}

/// A second handle on the same increments so two controls are costed on identical noise.
pub fn paired_ensembles(base: &BrownianEnsemble) -> BrownianEnsemble {
    base.clone()
}
