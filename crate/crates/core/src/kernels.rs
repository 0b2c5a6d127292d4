//! Memory kernels `(t, s) ↦ matrix` and the derived fields
//! `E1(t,s) = ∫_s^t φ1(t,r) dr` and `E2(t,s) = ∫_s^t ψ1(t,r) dW(r)`.
//!
//! A kernel is a sum of separable terms `form(t,s)·M`, where `form` is scalar and `M` is a
//! fixed matrix (identity when omitted). On the grid, forms are evaluated with integer index
//! arithmetic so indicator edges are exact.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_rng::{BrownianEnsemble, TimeGrid};

/// How the window indicator of [`KernelForm::Windowed`] is read for `t ≥ t0 + δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowReading {
    /// `1_{[t0,t0+δ)}(t) + 1_{[t0+δ,T]}(t)·1_{[t−δ,t)}(s)`.
    #[default]
    MovingWindow,
    /// `1_{[t0,t0+δ)}(t) + 1_{[t+δ,T]}(t)·1_{[t−δ,t)}(s)`; the second indicator never fires.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum KernelForm {
    Zero,
    Constant {
        c: f64,
    },
    /// `c·e^{λ(t−s)}`
    Exponential {
        c: f64,
        lambda: f64,
    },
    Windowed {
        base: Box<KernelForm>,
        delta: f64,
        #[serde(default)]
        reading: WindowReading,
    },
    /// Grid-indexed values, `values[k][j]` for `j ≤ k`. No interpolation off the grid.
    Tabulated {
        values: Vec<Vec<f64>>,
    },
}

const EDGE_TOL: f64 = 1e-9;

impl KernelForm {
    pub fn is_zero(&self) -> bool {
        match self {
            KernelForm::Zero => true,
            KernelForm::Constant { c } | KernelForm::Exponential { c, .. } => *c == 0.0,
            KernelForm::Windowed { base, .. } => base.is_zero(),
            KernelForm::Tabulated { values } => values.iter().flatten().all(|v| *v == 0.0),
        }
    }

    fn eval_off_grid(&self, grid: &TimeGrid, t: f64, s: f64) -> Result<f64> {
        Ok(match self {
            KernelForm::Zero => 0.0,
            KernelForm::Constant { c } => *c,
            KernelForm::Exponential { c, lambda } => c * (lambda * (t - s)).exp(),
            KernelForm::Windowed { base, delta, reading } => {
                let tol = EDGE_TOL * grid.dt;
                let early = t < grid.t0 + delta - tol;
                let late = match reading {
                    WindowReading::MovingWindow => t >= grid.t0 + delta - tol,
                    WindowReading::Literal => t >= t + delta - tol && *delta > 0.0,
                };
                let in_window = s >= t - delta - tol && s < t - tol;
                if early || (late && in_window) {
                    base.eval_off_grid(grid, t, s)?
                } else {
                    0.0
                }
            }
            KernelForm::Tabulated { .. } => {
                let k = on_grid_index(grid, t)?;
                let j = on_grid_index(grid, s)?;
                self.eval_grid(grid, k, j)
            }
        })
    }

    /// Value at `(t_k, t_j)`, `j ≤ k`.
    pub fn eval_grid(&self, grid: &TimeGrid, k: usize, j: usize) -> f64 {
        match self {
            KernelForm::Zero => 0.0,
            KernelForm::Constant { c } => *c,
            KernelForm::Exponential { c, lambda } => c * (lambda * (k - j) as f64 * grid.dt).exp(),
            KernelForm::Windowed { base, delta, reading } => {
                let w = (delta / grid.dt).round() as usize;
                let early = k < w;
                let late = match reading {
                    WindowReading::MovingWindow => k >= w,
                    WindowReading::Literal => false,
                };
                if early || (late && j + w >= k && j < k) {
                    base.eval_grid(grid, k, j)
                } else {
                    0.0
                }
            }
            KernelForm::Tabulated { values } => values
                .get(k)
                .and_then(|row| row.get(j))
                .copied()
                .unwrap_or(0.0),
        }
    }

    fn sup_abs(&self, grid: &TimeGrid) -> f64 {
        match self {
            KernelForm::Zero => 0.0,
            KernelForm::Constant { c } => c.abs(),
            KernelForm::Exponential { c, lambda } => c.abs() * (lambda.max(0.0) * grid.horizon()).exp(),
            KernelForm::Windowed { base, .. } => base.sup_abs(grid),
            KernelForm::Tabulated { values } => values.iter().flatten().fold(0.0, |a, v| a.max(v.abs())),
        }
    }

    /// Decay factor `ρ` with `form(k+1, j) = ρ·form(k, j)` for all `j ≤ k`, when one exists.
    fn recurrence_factor(&self, grid: &TimeGrid) -> Option<f64> {
        match self {
            KernelForm::Constant { .. } => Some(1.0),
            KernelForm::Exponential { lambda, .. } => Some((lambda * grid.dt).exp()),
            _ => None,
        }
    }

    fn validate(&self, grid: &TimeGrid, field: &str) -> Result<()> {
        match self {
            KernelForm::Zero => Ok(()),
            KernelForm::Constant { c } => finite(*c, field),
            KernelForm::Exponential { c, lambda } => {
                finite(*c, field)?;
                finite(*lambda, field)
            }
            KernelForm::Windowed { base, delta, .. } => {
                if !(*delta >= 0.0) {
                    return Err(Error::config(field, "window delta must be nonnegative"));
                }
                let w = (delta / grid.dt).round();
                if (delta - w * grid.dt).abs() > 1e-12 * grid.horizon() {
                    return Err(Error::config(field, "window delta is not a multiple of dt"));
                }
                base.validate(grid, field)
            }
            KernelForm::Tabulated { values } => {
                if values.len() != grid.n_steps + 1 || values.iter().enumerate().any(|(k, r)| r.len() < k + 1) {
                    return Err(Error::config(
                        field,
                        format!("tabulated kernel needs {} rows, row k holding at least k+1 values", grid.n_steps + 1),
                    ));
                }
                if values.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::config(field, "tabulated kernel has non-finite entries"));
                }
                Ok(())
            }
        }
    }
}

fn finite(v: f64, field: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, "non-finite kernel parameter"))
    }
}

fn on_grid_index(grid: &TimeGrid, t: f64) -> Result<usize> {
    let x = (t - grid.t0) / grid.dt;
    let k = x.round();
    if (x - k).abs() > EDGE_TOL || k < 0.0 || k as usize > grid.n_steps {
        return Err(Error::InvalidInput(format!("tabulated kernel queried off the grid at {t}")));
    }
    Ok(k as usize)
}

/// One separable term `form(t,s)·matrix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTerm {
    #[serde(flatten)]
    pub form: KernelForm,
    /// Row-major matrix factor; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum KernelRepr {
    Sum { terms: Vec<KernelTerm> },
    Single(KernelTerm),
}

/// A memory kernel: a sum of separable terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "KernelRepr", into = "KernelRepr")]
pub struct KernelSpec {
    pub terms: Vec<KernelTerm>,
}

impl From<KernelRepr> for KernelSpec {
    fn from(r: KernelRepr) -> Self {
        match r {
            KernelRepr::Sum { terms } => KernelSpec { terms },
            KernelRepr::Single(t) => KernelSpec { terms: vec![t] },
        }
    }
}

impl From<KernelSpec> for KernelRepr {
    fn from(k: KernelSpec) -> Self {
        if k.terms.len() == 1 {
            KernelRepr::Single(k.terms.into_iter().next().unwrap())
        } else {
            KernelRepr::Sum { terms: k.terms }
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::zero()
    }
}

impl KernelSpec {
    pub fn zero() -> Self {
        KernelSpec { terms: vec![] }
    }

    pub fn scalar(form: KernelForm) -> Self {
        KernelSpec {
            terms: vec![KernelTerm { form, matrix: None }],
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::scalar(KernelForm::Constant { c })
    }

    pub fn exponential(c: f64, lambda: f64) -> Self {
        Self::scalar(KernelForm::Exponential { c, lambda })
    }

    pub fn windowed(base: KernelForm, delta: f64, reading: WindowReading) -> Self {
        Self::scalar(KernelForm::Windowed {
            base: Box::new(base),
            delta,
            reading,
        })
    }

    pub fn with_matrix(form: KernelForm, matrix: Vec<Vec<f64>>) -> Self {
        KernelSpec {
            terms: vec![KernelTerm {
                form,
                matrix: Some(matrix),
            }],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| {
            t.form.is_zero()
                || t
                    .matrix
                    .as_ref()
                    .is_some_and(|m| m.iter().flatten().all(|v| *v == 0.0))
        })
    }

    pub fn validate(&self, grid: &TimeGrid, dim: usize, field: &str) -> Result<()> {
        for t in &self.terms {
            t.form.validate(grid, field)?;
            if let Some(m) = &t.matrix {
                if m.len() != dim || m.iter().any(|r| r.len() != dim) {
                    return Err(Error::config(field, format!("kernel matrix must be {dim}×{dim}")));
                }
                if m.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::config(field, "kernel matrix has non-finite entries"));
                }
            }
        }
        Ok(())
    }

    /// Upper bound on the operator norm over `[t0,T]²`, used as the kernel bound in the
    /// Picard weight recipe.
    pub fn sup_norm(&self, grid: &TimeGrid) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let m = t
                    .matrix
                    .as_ref()
                    .map(|m| m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt())
                    .unwrap_or(1.0);
                t.form.sup_abs(grid) * m
            })
            .sum()
    }

    fn term_matrix(&self, i: usize, dim: usize) -> DMatrix<f64> {
        match &self.terms[i].matrix {
            Some(m) => DMatrix::from_fn(dim, dim, |r, c| m[r][c]),
            None => DMatrix::identity(dim, dim),
        }
    }

    /// Value at `(t, s)` as a `dim × dim` matrix.
    pub fn eval(&self, grid: &TimeGrid, dim: usize, t: f64, s: f64) -> Result<DMatrix<f64>> {
        let tol = EDGE_TOL * grid.dt;
        if s > t + tol {
            return Err(Error::OutOfDomain {
                what: "kernel evaluation",
                t,
                s,
            });
        }
        let mut out = DMatrix::zeros(dim, dim);
        for (i, term) in self.terms.iter().enumerate() {
            let f = term.form.eval_off_grid(grid, t, s)?;
            if f != 0.0 {
                out += self.term_matrix(i, dim) * f;
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "kernel evaluation",
                path: 0,
                step: 0,
            });
        }
        Ok(out)
    }

    /// Value at grid indices `(k, j)`, row-major into `out` (`dim²` entries).
    pub fn eval_grid_into(&self, grid: &TimeGrid, dim: usize, k: usize, j: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for term in &self.terms {
            let f = term.form.eval_grid(grid, k, j);
            if f == 0.0 {
                continue;
            }
            match &term.matrix {
                None => (0..dim).for_each(|r| out[r * dim + r] += f),
                Some(m) => {
                    for r in 0..dim {
                        for c in 0..dim {
                            out[r * dim + c] += f * m[r][c];
                        }
                    }
                }
            }
        }
    }

    /// Scalar value at grid indices for a one-dimensional kernel.
    pub fn eval_grid_scalar(&self, grid: &TimeGrid, k: usize, j: usize) -> f64 {
        let mut out = [0.0];
        self.eval_grid_into(grid, 1, k, j, &mut out);
        out[0]
    }

    /// A memory accumulator computing `Σ_{j<k} K(t_k,t_j) v_j w_j` step by step.
    pub fn accumulator(&self, grid: &TimeGrid, dim: usize) -> MemoryAccumulator {
        let terms = self
            .terms
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.form.is_zero())
            .map(|(i, t)| {
                let matrix = t.matrix.as_ref().map(|_| self.term_matrix(i, dim));
                TermAccumulator {
                    form: t.form.clone(),
                    factor: t.form.recurrence_factor(grid),
                    matrix,
                    sum: vec![0.0; dim],
                }
            })
            .collect();
        MemoryAccumulator {
            grid: *grid,
            dim,
            terms,
            history: Vec::new(),
            k: 0,
        }
    }
}

struct TermAccumulator {
    form: KernelForm,
    factor: Option<f64>,
    matrix: Option<DMatrix<f64>>,
    sum: Vec<f64>,
}

/// Incremental evaluation of `m_k = Σ_{j<k} K(t_k, t_j) v_j w_j` where `w_j` is `dt` for
/// distributed delays and `ΔW_j` for noisy memory.
///
/// Constant and exponential terms use an O(1) recurrence per step; other forms keep the
/// weighted history and re-sum directly.
pub struct MemoryAccumulator {
    grid: TimeGrid,
    dim: usize,
    terms: Vec<TermAccumulator>,
    history: Vec<f64>,
    k: usize,
}

impl MemoryAccumulator {
    pub fn is_trivial(&self) -> bool {
        self.terms.is_empty()
    }

    /// Current value `m_k` written into `out`.
    pub fn value(&self, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let d = self.dim;
        for term in &self.terms {
            let direct;
            let s: &[f64] = if term.factor.is_some() {
                &term.sum
            } else {
                let mut acc = vec![0.0; d];
                for j in 0..self.k {
                    let f = term.form.eval_grid(&self.grid, self.k, j);
                    if f != 0.0 {
                        let h = &self.history[j * d..(j + 1) * d];
                        acc.iter_mut().zip(h).for_each(|(a, v)| *a += f * v);
                    }
                }
                direct = acc;
                &direct
            };
            match &term.matrix {
                None => out.iter_mut().zip(s).for_each(|(o, v)| *o += v),
                Some(m) => {
                    for r in 0..d {
                        for c in 0..d {
                            out[r] += m[(r, c)] * s[c];
                        }
                    }
                }
            }
        }
    }

    /// Append `v_k·w_k` and advance to `k + 1`.
    pub fn push(&mut self, v: &[f64], weight: f64) {
        if self.terms.is_empty() {
            self.k += 1;
            return;
        }
        let k = self.k;
        let mut needs_history = false;
        for term in &mut self.terms {
            if let Some(rho) = term.factor {
                let c = term.form.eval_grid(&self.grid, k, k);
                term.sum.iter_mut().zip(v).for_each(|(s, x)| *s = rho * (*s + c * x * weight));
            } else {
                needs_history = true;
            }
        }
        if needs_history {
            self.history.extend(v.iter().map(|x| x * weight));
        }
        self.k += 1;
    }
}

/// `E1(t_k, t_j) = Σ_{i=j}^{k−1} φ1(t_k, t_i)·dt` for all `j ≤ k`, stored as `dim × dim` blocks.
#[derive(Debug, Clone)]
pub struct E1Field {
    pub n_steps: usize,
    pub dim: usize,
    values: Vec<f64>,
    diag: Vec<f64>,
}

impl E1Field {
    fn offset(&self, k: usize, j: usize) -> usize {
        (k * (self.n_steps + 1) + j) * self.dim * self.dim
    }

    /// `E1(t_k, t_j)` block, row-major.
    pub fn at(&self, k: usize, j: usize) -> &[f64] {
        let o = self.offset(k, j);
        &self.values[o..o + self.dim * self.dim]
    }

    pub fn scalar(&self, k: usize, j: usize) -> f64 {
        self.at(k, j)[0]
    }

    /// The quadrature node at `r = s` alone, `φ1(t_k, t_j)·dt`.
    pub fn diagonal_node(&self, k: usize, j: usize) -> &[f64] {
        let o = self.offset(k, j);
        &self.diag[o..o + self.dim * self.dim]
    }

    /// `E1(t_k, t_j) − φ1(t_k, t_j)·dt`: the sum over nodes strictly after `t_j`.
    pub fn strict_at(&self, k: usize, j: usize, out: &mut [f64]) {
        let a = self.at(k, j);
        let b = self.diagonal_node(k, j);
        out.iter_mut().zip(a.iter().zip(b)).for_each(|(o, (x, y))| *o = x - y);
    }

    /// True when every entry equals the same block (the kernel `E1 ≡ C` regime).
    pub fn is_constant(&self) -> bool {
        let d2 = self.dim * self.dim;
        let first = &self.values[0..d2];
        (0..=self.n_steps).all(|k| (0..=k).all(|j| self.at(k, j) == first))
    }
}

pub fn build_e1(kernel: &KernelSpec, grid: &TimeGrid, dim: usize) -> E1Field {
    let n = grid.n_steps;
    let d2 = dim * dim;
    let mut values = vec![0.0; (n + 1) * (n + 1) * d2];
    let mut diag = vec![0.0; (n + 1) * (n + 1) * d2];
    let mut node = vec![0.0; d2];
    for k in 0..=n {
        let mut acc = vec![0.0; d2];
        for j in (0..k).rev() {
            kernel.eval_grid_into(grid, dim, k, j, &mut node);
            let o = (k * (n + 1) + j) * d2;
            for (a, v) in acc.iter_mut().zip(&node) {
                *a += v * grid.dt;
            }
            values[o..o + d2].copy_from_slice(&acc);
            for (dst, v) in diag[o..o + d2].iter_mut().zip(&node) {
                *dst = v * grid.dt;
            }
        }
    }
    if kernel.terms.iter().all(|t| matches!(t.form, KernelForm::Constant { .. } | KernelForm::Zero)) {
        // Exact closed form c·(t_k − t_j) for constant kernels, free of summation drift.
        let mut c = vec![0.0; d2];
        kernel.eval_grid_into(grid, dim, 0, 0, &mut c);
        for k in 0..=n {
            for j in 0..=k {
                let o = (k * (n + 1) + j) * d2;
                let span = grid.t(k) - grid.t(j);
                for (dst, cv) in values[o..o + d2].iter_mut().zip(&c) {
                    *dst = cv * span;
                }
            }
        }
    }
    E1Field {
        n_steps: n,
        dim,
        values,
        diag,
    }
}

/// `E2(t_k, t_j) = Σ_{i=j}^{k−1} ψ1(t_k, t_i)·ΔW_i` per path, materialized one `k`-row at a time.
#[derive(Debug, Clone)]
pub struct E2Field {
    pub kernel: KernelSpec,
    pub dim: usize,
    pub noise: BrownianEnsemble,
}

pub fn build_e2(kernel: &KernelSpec, w: &BrownianEnsemble, dim: usize) -> E2Field {
    E2Field {
        kernel: kernel.clone(),
        dim,
        noise: w.clone(),
    }
}

impl E2Field {
    pub fn is_zero(&self) -> bool {
        self.kernel.is_zero()
    }

    /// Row `k` for one path: blocks `E2(t_k, t_j)` for `j = 0..=k`, each `dim²` long.
    pub fn row(&self, path: usize, k: usize) -> Vec<f64> {
        let d2 = self.dim * self.dim;
        let grid = &self.noise.grid;
        let mut out = vec![0.0; (k + 1) * d2];
        if self.is_zero() {
            return out;
        }
        let mut node = vec![0.0; d2];
        for j in (0..k).rev() {
            self.kernel.eval_grid_into(grid, self.dim, k, j, &mut node);
            let dw = self.noise.dw(path, j);
            let (head, tail) = out.split_at_mut((j + 1) * d2);
            let next = &tail[..d2];
            let cur = &mut head[j * d2..];
            for i in 0..d2 {
                cur[i] = next[i] + node[i] * dw;
            }
        }
        out
    }

    /// Scalar entry for one-dimensional kernels.
    pub fn scalar(&self, path: usize, k: usize, j: usize) -> f64 {
        self.row(path, k)[j * self.dim * self.dim]
    }
}
