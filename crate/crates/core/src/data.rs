//! Core domain types: the dataset, bent-line parameters and fit summaries.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// A regression sample: response `y`, an n x p matrix of linear covariates
/// `x`, and the scalar threshold covariate `z` whose relation with `y` may
/// change slope at an unknown point.
///
/// `x` carries no implicit intercept; callers append an explicit constant
/// column when they want one. The constructor validates shapes, finiteness
/// and that `z` has at least three distinct values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: DMatrix<f64>,
    z: Vec<f64>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, z: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::TooFewObservations { needed: 1, got: 0 });
        }
        if x.nrows() != n {
            return Err(Error::LengthMismatch {
                what: "x rows",
                expected: n,
                got: x.nrows(),
            });
        }
        if z.len() != n {
            return Err(Error::LengthMismatch {
                what: "z",
                expected: n,
                got: z.len(),
            });
        }
        check_finite(&y, "y")?;
        check_finite(&z, "z")?;
        for (idx, v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "x",
                    index: idx,
                });
            }
        }
        let distinct = count_distinct(&z);
        if distinct < 3 {
            return Err(Error::TooFewDistinctThresholdValues { distinct });
        }
        Ok(Dataset { y, x, z })
    }

    /// Build from covariate columns instead of a matrix.
    pub fn from_columns(y: Vec<f64>, x_cols: &[Vec<f64>], z: Vec<f64>) -> Result<Self> {
        let n = y.len();
        for (j, col) in x_cols.iter().enumerate() {
            if col.len() != n {
                return Err(Error::LengthMismatch {
                    what: "x column",
                    expected: n,
                    got: x_cols[j].len(),
                });
            }
        }
        let p = x_cols.len();
        let x = DMatrix::from_fn(n, p, |i, j| x_cols[j][i]);
        Self::new(y, x, z)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        (0..self.p()).map(|j| self.x[(i, j)]).collect()
    }

    pub fn z_range(&self) -> (f64, f64) {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in &self.z {
            min = min.min(v);
            max = max.max(v);
        }
        (min, max)
    }

    /// Sorted distinct values of the threshold covariate.
    pub fn distinct_z(&self) -> Vec<f64> {
        let mut v = self.z.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        v
    }

    /// Subset by row indices (used by cross-validation).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let y = indices.iter().map(|&i| self.y[i]).collect();
        let z = indices.iter().map(|&i| self.z[i]).collect();
        let x = DMatrix::from_fn(indices.len(), self.p(), |i, j| self.x[(indices[i], j)]);
        Self::new(y, x, z)
    }
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    for (index, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { what, index });
        }
    }
    Ok(())
}

fn count_distinct(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v.len()
}

/// Parameters of the continuous two-segment model
/// `y = alpha' x + beta z + gamma (z - tau)_+`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BentLineParams {
    /// Coefficients on the linear covariates (includes the intercept when the
    /// caller supplied a constant column).
    pub alpha: Vec<f64>,
    /// Slope of the threshold covariate before the changepoint.
    pub beta: f64,
    /// Difference in slope after the changepoint.
    pub gamma: f64,
    /// Changepoint location.
    pub tau: f64,
}

impl BentLineParams {
    pub fn new(alpha: Vec<f64>, beta: f64, gamma: f64, tau: f64) -> Self {
        BentLineParams {
            alpha,
            beta,
            gamma,
            tau,
        }
    }

    /// Predicted response at one observation. The hinge `(z - tau)_+`
    /// vanishes at `z = tau`, so the prediction is continuous there.
    pub fn predict(&self, x_row: &[f64], z: f64) -> Result<f64> {
        if x_row.len() != self.alpha.len() {
            return Err(Error::DimensionMismatch {
                expected: self.alpha.len(),
                got: x_row.len(),
            });
        }
        let linear: f64 = self
            .alpha
            .iter()
            .zip(x_row)
            .map(|(a, x)| a * x)
            .sum();
        Ok(linear + self.beta * z + self.gamma * (z - self.tau).max(0.0))
    }

    /// Predictions over a whole dataset.
    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        (0..dataset.n())
            .map(|i| self.predict(&dataset.x_row(i), dataset.z()[i]))
            .collect()
    }
}

/// A fitted bent-line model together with Wald inference for all parameters
/// including the changepoint.
#[derive(Debug, Clone)]
pub struct BentLineFit {
    pub params: BentLineParams,
    /// Final estimate of the reparameterization nuisance coefficient; close
    /// to zero at convergence.
    pub eta_final: f64,
    /// Asymptotic covariance of (alpha, beta, gamma, eta), shape (p+3)x(p+3).
    pub covariance: DMatrix<f64>,
    /// Standard error of the changepoint estimate.
    pub se_tau: f64,
    /// Wald confidence interval for the changepoint at `ci_level`.
    pub ci_tau: (f64, f64),
    /// Estimated scale parameter of the fit (rank scale for the rank
    /// estimator, residual standard deviation for the least-squares baseline).
    pub scale_c_phi: f64,
    /// Confidence level used for all reported intervals.
    pub ci_level: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Residuals of the final bent-line model, `y - prediction`.
    pub residuals: Vec<f64>,
}

impl BentLineFit {
    /// Parameter estimates in covariance order: (alpha..., beta, gamma).
    pub fn theta(&self) -> Vec<f64> {
        let mut v = self.params.alpha.clone();
        v.push(self.params.beta);
        v.push(self.params.gamma);
        v
    }

    /// Standard errors of (alpha..., beta, gamma) from the covariance diagonal.
    pub fn theta_standard_errors(&self) -> Vec<f64> {
        let k = self.params.alpha.len() + 2;
        (0..k)
            .map(|i| self.covariance[(i, i)].max(0.0).sqrt())
            .collect()
    }

    /// Wald confidence intervals for (alpha..., beta, gamma) at `ci_level`.
    pub fn theta_confidence_intervals(&self) -> Vec<(f64, f64)> {
        let zq = stats::normal_quantile(1.0 - (1.0 - self.ci_level) / 2.0);
        self.theta()
            .iter()
            .zip(self.theta_standard_errors())
            .map(|(est, se)| (est - zq * se, est + zq * se))
            .collect()
    }
}

/// Fit of the no-changepoint model `y = xi' w` with `w = (x, z)`, along with
/// residual rank and density summaries used by the existence test.
#[derive(Debug, Clone)]
pub struct NullFit {
    /// Coefficients on `w = (x, z)`, in that column order.
    pub coefficients: Vec<f64>,
    /// Residuals `y - xi' w`.
    pub residuals: Vec<f64>,
    /// Empirical CDF of the residuals evaluated at each residual,
    /// `rank / (n + 1)` with midranks for ties.
    pub residual_ecdf: Vec<f64>,
    /// Kernel density estimate of the residual distribution at each residual.
    pub residual_density: Vec<f64>,
    /// Second-moment matrix of the design, `n^{-1} sum w_i w_i'`.
    pub design_second_moment: DMatrix<f64>,
    /// Estimated rank-regression scale parameter.
    pub c_phi_hat: f64,
    /// Bandwidth used for the residual density estimate.
    pub bandwidth: f64,
}

/// Outcome of a changepoint existence test: the observed sup statistic, the
/// evaluated process over the candidate grid, and the bootstrap calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CusumTestResult {
    /// Observed statistic, the sup of the absolute process over the grid.
    pub statistic: f64,
    /// Candidate changepoint grid.
    pub tau_grid: Vec<f64>,
    /// Process values over the grid.
    pub process_path: Vec<f64>,
    /// Bootstrap replicate statistics, one per replicate in order.
    pub bootstrap_stats: Vec<f64>,
    /// Fraction of bootstrap statistics at or above the observed statistic.
    pub p_value: f64,
    /// Bandwidth used for density-dependent terms.
    pub bandwidth: f64,
    /// Master seed for the bootstrap streams.
    pub seed: u64,
}

impl CusumTestResult {
    pub fn num_bootstrap(&self) -> usize {
        self.bootstrap_stats.len()
    }
}
