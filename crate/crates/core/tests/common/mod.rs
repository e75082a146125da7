//! Shared helpers for the integration and acceptance suites.
#![allow(dead_code)]

use bentrank_core::nalgebra::DMatrix;
use bentrank_core::sim::{self, ErrorKind, SimScenario};
use bentrank_core::{dispersion, fit_rank_linear, Dataset, ScoreFunction};

/// Noiseless bent-line dataset on an even z grid with an intercept column.
pub fn noiseless_dataset(n: usize, alpha: f64, beta: f64, gamma: f64, tau: f64) -> Dataset {
    let z: Vec<f64> = (0..n)
        .map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64)
        .collect();
    let y: Vec<f64> = z
        .iter()
        .map(|&zi| alpha + beta * zi + gamma * (zi - tau).max(0.0))
        .collect();
    Dataset::from_columns(y, &[vec![1.0; n]], z).unwrap()
}

/// One replicate of the reference scenario (intercept 3, slope 2.5,
/// slope change -4, changepoint 0.5, n = 200) under the given error law.
pub fn reference_replicate(kind: ErrorKind, seed: u64, rep: u64) -> Dataset {
    let scenario = SimScenario::reference(kind, 1, seed);
    sim::generate(&scenario, rep)
}

/// Profile dispersion oracle: rank-fit `y` on `[z, (z - tau)_+]` (the
/// intercept drops out of rank statistics) and report the dispersion of the
/// fitted residuals.
pub fn profile_dispersion_oracle(dataset: &Dataset, tau: f64) -> f64 {
    let n = dataset.n();
    let design = DMatrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            dataset.z()[i]
        } else {
            (dataset.z()[i] - tau).max(0.0)
        }
    });
    match fit_rank_linear(dataset.y(), &design, ScoreFunction::Wilcoxon) {
        Ok(fit) => fit.dispersion_value,
        Err(_) => f64::INFINITY,
    }
}

/// Kolmogorov-Smirnov statistic of a sample against the uniform CDF on
/// [0, 1].
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut stat = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let upper = (i + 1) as f64 / n - x;
        let lower = x - i as f64 / n;
        stat = stat.max(upper.max(lower));
    }
    stat
}

/// Brute-force Wilcoxon dispersion via the pairwise-difference identity.
pub fn pairwise_dispersion_oracle(residuals: &[f64]) -> f64 {
    let n = residuals.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += (residuals[i] - residuals[j]).abs();
        }
    }
    12f64.sqrt() / (2.0 * (n + 1) as f64) * total
}

/// Checked dispersion wrapper used by the oracles.
pub fn wilcoxon_dispersion(residuals: &[f64]) -> f64 {
    dispersion(residuals, ScoreFunction::Wilcoxon).unwrap()
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_range(matrix: &DMatrix<f64>) -> (f64, f64) {
    let eigen = matrix.clone().symmetric_eigen();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in eigen.eigenvalues.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    (min, max)
}
