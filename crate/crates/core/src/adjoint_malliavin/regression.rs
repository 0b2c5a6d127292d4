use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_rng::BrownianEnsemble;
use crate::sdde_forward::Trajectories;

/// Conditioning variables per `(path, k)`: the Brownian level and optionally the state.
#[derive(Debug, Clone)]
pub struct Features {
    pub n_paths: usize,
    pub n_times: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl Features {
    /// `W(t_k)` alone.
    pub fn brownian(w: &BrownianEnsemble) -> Self {
        let nt = w.grid.n_steps + 1;
        let mut data = Vec::with_capacity(w.n_paths * nt);
        for p in 0..w.n_paths {
            data.extend(w.path_values(p));
        }
        Features {
            n_paths: w.n_paths,
            n_times: nt,
            width: 1,
            data,
        }
    }

    /// `W(t_k)`, optionally `W(t_k − δ)`, and `(x, y, z, κ)` at `t_k`.
    pub fn from_trajectories(traj: &Trajectories, w: &BrownianEnsemble, delayed_brownian: bool) -> Self {
        let nt = w.grid.n_steps + 1;
        let d = w.grid.delay_steps;
        let sl = traj.dims.state_len();
        let width = 1 + usize::from(delayed_brownian) + sl;
        let mut data = Vec::with_capacity(w.n_paths * nt * width);
        let mut st = vec![0.0; sl];
        for p in 0..w.n_paths {
            let wp = w.path_values(p);
            for k in 0..nt {
                data.push(wp[k]);
                if delayed_brownian {
                    data.push(if k >= d { wp[k - d] } else { 0.0 });
                }
                traj.state_args(p, k, &mut st);
                data.extend_from_slice(&st);
            }
        }
        Features {
            n_paths: w.n_paths,
            n_times: nt,
            width,
            data,
        }
    }

    pub fn row(&self, path: usize, k: usize) -> &[f64] {
        let o = (path * self.n_times + k) * self.width;
        &self.data[o..o + self.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionOptions {
    /// Total degree of the polynomial basis.
    pub degree: usize,
    /// Ridge penalty relative to the mean diagonal of the Gram matrix; the intercept is not penalized.
    pub ridge: f64,
    /// Condition numbers above this raise `IllConditionedRegression`.
    pub max_condition: f64,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        RegressionOptions {
            degree: 3,
            ridge: 1e-8,
            max_condition: 1e12,
        }
    }
}

/// Least-squares projection onto polynomials of the time-`k` features.
#[derive(Debug, Clone)]
pub struct StepRegression {
    pub step: usize,
    pub condition: f64,
    active: Vec<usize>,
    shift: Vec<f64>,
    scale: Vec<f64>,
    exponents: Vec<Vec<u32>>,
    basis: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

fn multi_indices(vars: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; vars]];
    let mut frontier = out.clone();
    for _ in 0..degree {
        let mut next = Vec::new();
        for e in &frontier {
            let last = e.iter().rposition(|x| *x > 0).unwrap_or(0);
            for v in last..vars {
                let mut f = e.clone();
                f[v] += 1;
                next.push(f);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

impl StepRegression {
    pub fn new(features: &Features, k: usize, opts: &RegressionOptions) -> Result<Self> {
        let np = features.n_paths;
        let wd = features.width;
        let mut active = Vec::new();
        let mut shift = Vec::new();
        let mut scale = Vec::new();
        let mut kept: Vec<Vec<f64>> = Vec::new();
        for c in 0..wd {
            let col: Vec<f64> = (0..np).map(|p| features.row(p, k)[c]).collect();
            let (m, v) = crate::stats::mean_var(&col);
            let sd = v.sqrt();
            if sd > 1e-12 * (1.0 + m.abs()) && !kept.contains(&col) {
                active.push(c);
                shift.push(m);
                scale.push(sd);
                kept.push(col);
            }
        }
        let exponents = multi_indices(active.len(), opts.degree);
        let nb = exponents.len();
        let mut basis = DMatrix::zeros(np, nb);
        let mut z = vec![0.0; active.len()];
        for p in 0..np {
            let row = features.row(p, k);
            for (i, &c) in active.iter().enumerate() {
                z[i] = (row[c] - shift[i]) / scale[i];
            }
            for (b, e) in exponents.iter().enumerate() {
                basis[(p, b)] = e.iter().zip(&z).map(|(&q, x)| x.powi(q as i32)).product();
            }
        }
        let mut gram = basis.tr_mul(&basis) / np as f64;
        let lambda = opts.ridge * gram.trace() / nb as f64;
        for i in 1..nb {
            gram[(i, i)] += lambda;
        }
        let eig = gram.clone().symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        let condition = hi / lo;
        if !condition.is_finite() || condition > opts.max_condition || lo <= 0.0 {
            return Err(Error::IllConditionedRegression { step: k, condition });
        }
        let chol = nalgebra::Cholesky::new(gram).ok_or(Error::IllConditionedRegression { step: k, condition })?;
        Ok(StepRegression {
            step: k,
            condition,
            active,
            shift,
            scale,
            exponents,
            basis,
            chol,
        })
    }

    pub fn n_basis(&self) -> usize {
        self.exponents.len()
    }

    pub fn coefficients(&self, targets: &[f64]) -> DVector<f64> {
        let np = targets.len() as f64;
        let rhs = self.basis.tr_mul(&DVector::from_column_slice(targets)) / np;
        self.chol.solve(&rhs)
    }

    /// Fitted values `E[target | features_k]` on every path.
    pub fn project(&self, targets: &[f64]) -> Vec<f64> {
        if let Some(c) = constant_value(targets) {
            return vec![c; targets.len()];
        }
        let coef = self.coefficients(targets);
        (&self.basis * coef).as_slice().to_vec()
    }

    /// Evaluates a fitted polynomial at an arbitrary feature row.
    pub fn predict(&self, coef: &DVector<f64>, row: &[f64]) -> f64 {
        let z: Vec<f64> = self
            .active
            .iter()
            .enumerate()
            .map(|(i, &c)| (row[c] - self.shift[i]) / self.scale[i])
            .collect();
        self.exponents
            .iter()
            .zip(coef.iter())
            .map(|(e, a)| a * e.iter().zip(&z).map(|(&q, x)| x.powi(q as i32)).product::<f64>())
            .sum()
    }
}

/// The common value when every entry is bit-identical.
pub fn constant_value(xs: &[f64]) -> Option<f64> {
    let first = *xs.first()?;
    xs.iter().all(|v| *v == first).then_some(first)
}

/// Builds the step regression on first use; deterministic targets never pay for it.
pub(crate) struct LazyRegression<'a> {
    features: &'a Features,
    opts: RegressionOptions,
    k: usize,
    inner: Option<StepRegression>,
}

impl<'a> LazyRegression<'a> {
    pub fn new(features: &'a Features, k: usize, opts: RegressionOptions) -> Self {
        LazyRegression {
            features,
            opts,
            k,
            inner: None,
        }
    }

    pub fn condition(&self) -> Option<f64> {
        self.inner.as_ref().map(|r| r.condition)
    }

    pub fn project(&mut self, targets: &[f64]) -> Result<Vec<f64>> {
        if let Some(c) = constant_value(targets) {
            return Ok(vec![c; targets.len()]);
        }
        if self.inner.is_none() {
            self.inner = Some(StepRegression::new(self.features, self.k, &self.opts)?);
        }
        Ok(self.inner.as_ref().unwrap().project(targets))
    }

    /// Projects each of the `width` interleaved components of `targets` (path-major).
    pub fn project_interleaved(&mut self, targets: &[f64], width: usize) -> Result<Vec<f64>> {
        let np = targets.len() / width;
        let mut out = vec![0.0; targets.len()];
        let mut col = vec![0.0; np];
        for c in 0..width {
            for p in 0..np {
                col[p] = targets[p * width + c];
            }
            let fit = self.project(&col)?;
            for p in 0..np {
                out[p * width + c] = fit[p];
            }
        }
        Ok(out)
    }
}
