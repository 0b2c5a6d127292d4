//! Sample statistics shared by every Monte Carlo verdict.

use serde::{Deserialize, Serialize};

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let (mean, var) = mean_var(samples);
        McEstimate {
            mean,
            std_err: (var / samples.len() as f64).sqrt(),
            n_paths: samples.len(),
            seed,
        }
    }

    pub fn exact(value: f64, n_paths: usize, seed: u64) -> Self {
        McEstimate {
            mean: value,
            std_err: 0.0,
            n_paths,
            seed,
        }
    }
}

/// Sample mean and unbiased sample variance (zero for a single sample).
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Least-squares slope of `log err` against `log h`.
pub fn fitted_order(h: &[f64], err: &[f64]) -> f64 {
    let lx: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let mx = mean(&lx);
    let my = mean(&ly);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Standard error of the sample variance, from the fourth central moment.
pub fn variance_std_err(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (m, v) = mean_var(xs);
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - v * v).max(0.0) / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_of_constant_samples_is_exact() {
        let e = McEstimate::from_samples(&[3.0; 10], 1);
        assert_eq!(e.mean, 3.0);
        assert_eq!(e.std_err, 0.0);
    }

    #[test]
    fn order_of_power_law() {
        let h = [0.1, 0.05, 0.025];
        let e: Vec<f64> = h.iter().map(|x: &f64| 2.0 * x.sqrt()).collect();
        assert!((fitted_order(&h, &e) - 0.5).abs() < 1e-12);
    }
}
