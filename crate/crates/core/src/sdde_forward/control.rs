use crate::error::{Error, Result};
use crate::grid_rng::{BrownianEnsemble, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
enum Values {
    OpenLoop(Vec<f64>),
    PathIndexed { n_paths: usize, values: Vec<f64> },
}

/// Control values on grid indices `0..=n_steps`; the initial segment `ς` lives in the system.
///
/// Path-indexed controls can only be built through [`ControlProcess::adapted`], which hands
/// the generator the increments strictly before `t_k`, so adaptedness holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProcess {
    pub m: usize,
    pub n_steps: usize,
    values: Values,
}

impl ControlProcess {
    pub fn open_loop(grid: &TimeGrid, m: usize, mut f: impl FnMut(usize, f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity((grid.n_steps + 1) * m);
        for k in 0..=grid.n_steps {
            let v = f(k, grid.t(k));
            if v.len() != m {
                return Err(Error::InvalidInput(format!("control value at step {k} has {} components, expected {m}", v.len())));
            }
            values.extend(v);
        }
        Ok(ControlProcess {
            m,
            n_steps: grid.n_steps,
            values: Values::OpenLoop(values),
        })
    }

    pub fn constant(grid: &TimeGrid, value: &[f64]) -> Self {
        let m = value.len();
        let values = (0..=grid.n_steps).flat_map(|_| value.iter().copied()).collect();
        ControlProcess {
            m,
            n_steps: grid.n_steps,
            values: Values::OpenLoop(values),
        }
    }

    pub fn zero(grid: &TimeGrid, m: usize) -> Self {
        Self::constant(grid, &vec![0.0; m])
    }

    /// Scalar open-loop control `t ↦ f(t)`.
    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..=grid.n_steps).map(|k| f(grid.t(k))).collect();
        ControlProcess {
            m: 1,
            n_steps: grid.n_steps,
            values: Values::OpenLoop(values),
        }
    }

    /// Path-indexed control: `f(k, past)` sees only `ΔW_0..ΔW_{k−1}` of its path.
    pub fn adapted(
        w: &BrownianEnsemble,
        m: usize,
        f: impl Fn(usize, &[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let n = w.grid.n_steps;
        let mut values = Vec::with_capacity(w.n_paths * (n + 1) * m);
        for p in 0..w.n_paths {
            let inc = w.increments(p);
            for k in 0..=n {
                let v = f(k, &inc[..k]);
                if v.len() != m {
                    return Err(Error::InvalidInput(format!("adapted control at step {k} has wrong dimension")));
                }
                values.extend(v);
            }
        }
        Ok(ControlProcess {
            m,
            n_steps: n,
            values: Values::PathIndexed {
                n_paths: w.n_paths,
                values,
            },
        })
    }

    pub fn is_open_loop(&self) -> bool {
        matches!(self.values, Values::OpenLoop(_))
    }

    pub fn n_paths(&self) -> Option<usize> {
        match &self.values {
            Values::OpenLoop(_) => None,
            Values::PathIndexed { n_paths, .. } => Some(*n_paths),
        }
    }

    #[inline]
    pub fn at(&self, path: usize, k: usize) -> &[f64] {
        let m = self.m;
        match &self.values {
            Values::OpenLoop(v) => &v[k * m..(k + 1) * m],
            Values::PathIndexed { values, .. } => {
                let o = (path * (self.n_steps + 1) + k) * m;
                &values[o..o + m]
            }
        }
    }

    /// Open-loop values, if the control is deterministic.
    pub fn open_loop_values(&self) -> Option<&[f64]> {
        match &self.values {
            Values::OpenLoop(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.values {
            Values::OpenLoop(v) => v.iter().all(|x| *x == 0.0),
            Values::PathIndexed { values, .. } => values.iter().all(|x| *x == 0.0),
        }
    }

    /// `self + rho·other`.
    pub fn plus_scaled(&self, other: &ControlProcess, rho: f64) -> Result<Self> {
        if self.m != other.m || self.n_steps != other.n_steps {
            return Err(Error::InvalidInput("control processes live on different grids".into()));
        }
        let values = match (&self.values, &other.values) {
            (Values::OpenLoop(a), Values::OpenLoop(b)) => {
                Values::OpenLoop(a.iter().zip(b).map(|(x, y)| x + rho * y).collect())
            }
            _ => {
                let n_paths = self.n_paths().or(other.n_paths()).unwrap_or(1);
                if let (Some(a), Some(b)) = (self.n_paths(), other.n_paths()) {
                    if a != b {
                        return Err(Error::InvalidInput("path-indexed controls disagree on path count".into()));
                    }
                }
                let mut values = Vec::with_capacity(n_paths * (self.n_steps + 1) * self.m);
                for p in 0..n_paths {
                    for k in 0..=self.n_steps {
                        let a = self.at(p, k);
                        let b = other.at(p, k);
                        values.extend(a.iter().zip(b).map(|(x, y)| x + rho * y));
                    }
                }
                Values::PathIndexed { n_paths, values }
            }
        };
        Ok(ControlProcess {
            m: self.m,
            n_steps: self.n_steps,
            values,
        })
    }

    /// Componentwise clamp into the box `U = Π [lo_i, hi_i]`.
    pub fn projected(&self, bounds: &[(f64, f64)]) -> Result<Self> {
        if bounds.len() != self.m {
            return Err(Error::InvalidInput("control bounds must match the control dimension".into()));
        }
        let clamp = |v: &mut Vec<f64>| {
            for (i, x) in v.iter_mut().enumerate() {
                let (lo, hi) = bounds[i % self.m];
                *x = x.clamp(lo, hi);
            }
        };
        let mut out = self.clone();
        match &mut out.values {
            Values::OpenLoop(v) => clamp(v),
            Values::PathIndexed { values, .. } => clamp(values),
        }
        Ok(out)
    }

    /// Embed this control into components `offset..offset+m` of an `m_total`-dimensional one,
    /// filling the other components from `rest`.
    pub fn embed(&self, rest: &ControlProcess, offset: usize) -> Result<Self> {
        let m_total = rest.m;
        if offset + self.m > m_total || rest.n_steps != self.n_steps {
            return Err(Error::InvalidInput("embedding does not fit the target control".into()));
        }
        let n_paths = self.n_paths().or(rest.n_paths());
        let rows = n_paths.unwrap_or(1);
        let mut values = Vec::with_capacity(rows * (self.n_steps + 1) * m_total);
        for p in 0..rows {
            for k in 0..=self.n_steps {
                let mut v = rest.at(p, k).to_vec();
                v[offset..offset + self.m].copy_from_slice(self.at(p, k));
                values.extend(v);
            }
        }
        let values = match n_paths {
            None => Values::OpenLoop(values),
            Some(n_paths) => Values::PathIndexed { n_paths, values },
        };
        Ok(ControlProcess {
            m: m_total,
            n_steps: self.n_steps,
            values,
        })
    }

    /// Components `offset..offset+width` as a control of their own.
    pub fn component(&self, offset: usize, width: usize) -> Self {
        let take = |src: &[f64], rows: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(rows * (self.n_steps + 1) * width);
            for chunk in src.chunks(self.m) {
                out.extend_from_slice(&chunk[offset..offset + width]);
            }
            out
        };
        let values = match &self.values {
            Values::OpenLoop(v) => Values::OpenLoop(take(v, 1)),
            Values::PathIndexed { n_paths, values } => Values::PathIndexed {
                n_paths: *n_paths,
                values: take(values, *n_paths),
            },
        };
        ControlProcess {
            m: width,
            n_steps: self.n_steps,
            values,
        }
    }
}
