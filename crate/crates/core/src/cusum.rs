//! Score-type test for the existence of a changepoint.
//!
//! Fitting the changepoint model needs `gamma != 0`; this module tests that
//! assumption without ever fitting the alternative. Under the null the model
//! is linear in `w = (x, z)`. The test cumulates rank-centered null residuals
//! against the hinge direction,
//! `R_n(tau) = n^{-1/2} sum_i sqrt(12) (rank_i/(n+1) - 1/2) (z_i - tau) I(z_i <= tau)`,
//! takes the sup of `|R_n|` over a candidate grid, and calibrates it by a
//! wild bootstrap of its asymptotic representation, which requires the
//! residual ECDF, a kernel density estimate at the residuals, and the rank
//! scale parameter.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CusumTestResult, Dataset, NullFit};
use crate::error::{Error, Result};
use crate::kde::{self, Kernel};
use crate::rank::{self, ScoreFunction};
use crate::rng::{self, tag};
use crate::stats;

const SQRT_12: f64 = 3.464_101_615_137_754_6;

/// Controls for the existence test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    /// Number of bootstrap replicates.
    pub nb: usize,
    /// Bandwidth multiplier `c` in `h = c * sd * n^{-1/5}` for the residual
    /// density entering the bootstrap. The scale-parameter estimate keeps its
    /// own rule-of-thumb bandwidth.
    pub bandwidth_mult: f64,
    /// Kernel for the residual density estimate.
    pub kernel: Kernel,
    /// The candidate grid keeps all distinct `z` values between these two
    /// quantiles of `z`.
    pub grid_lower_quantile: f64,
    pub grid_upper_quantile: f64,
    /// Master seed for the bootstrap multiplier streams.
    pub seed: u64,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            nb: 1000,
            bandwidth_mult: 1.06,
            kernel: Kernel::Epanechnikov,
            grid_lower_quantile: 0.1,
            grid_upper_quantile: 0.9,
            seed: 0,
        }
    }
}

impl TestConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.nb == 0 {
            return Err(Error::InvalidConfig("nb must be at least 1".into()));
        }
        if !(self.bandwidth_mult > 0.0) {
            return Err(Error::InvalidConfig(
                "bandwidth_mult must be positive".into(),
            ));
        }
        if !(self.grid_lower_quantile > 0.0
            && self.grid_lower_quantile < self.grid_upper_quantile
            && self.grid_upper_quantile < 1.0)
        {
            return Err(Error::InvalidConfig(
                "grid quantiles must satisfy 0 < lo < hi < 1".into(),
            ));
        }
        Ok(())
    }
}

/// Null-model design `w = (x, z)`.
pub(crate) fn null_design(dataset: &Dataset) -> DMatrix<f64> {
    let n = dataset.n();
    let p = dataset.p();
    DMatrix::from_fn(n, p + 1, |i, j| {
        if j < p {
            dataset.x()[(i, j)]
        } else {
            dataset.z()[i]
        }
    })
}

pub(crate) fn second_moment(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows() as f64;
    (w.transpose() * w) / n
}

/// Rank-fit the null model and collect everything the bootstrap needs:
/// residuals, their ECDF `rank/(n+1)`, a kernel density estimate at each
/// residual, the design second-moment matrix, and the scale parameter.
pub fn fit_null(dataset: &Dataset, config: &TestConfig) -> Result<NullFit> {
    config.validate()?;
    let n = dataset.n();
    let w = null_design(dataset);
    if n <= w.ncols() {
        return Err(Error::TooFewObservations {
            needed: w.ncols() + 1,
            got: n,
        });
    }

    let fit = crate::design::rank_fit_design_warm(
        dataset.y(),
        &w,
        ScoreFunction::Wilcoxon,
        None,
    )?;
    let residuals = fit.residuals;

    let r = rank::ranks(&residuals)?;
    let denom = (n + 1) as f64;
    let residual_ecdf: Vec<f64> = r.iter().map(|rank| rank / denom).collect();

    let bandwidth = kde::rule_of_thumb_bandwidth(&residuals, config.bandwidth_mult);
    let residual_density = if bandwidth > 0.0 {
        kde::density_at(&residuals, &residuals, bandwidth, config.kernel)
    } else {
        vec![0.0; n]
    };

    let design_second_moment = second_moment(&w);
    let c_phi_hat = rank::estimate_c_phi_default(&residuals, ScoreFunction::Wilcoxon)
        .unwrap_or(0.0);

    Ok(NullFit {
        coefficients: fit.coefficients,
        residuals,
        residual_ecdf,
        residual_density,
        design_second_moment,
        c_phi_hat,
        bandwidth,
    })
}

/// Candidate changepoint grid: all distinct observed `z` between the
/// configured quantiles of `z`.
pub fn default_tau_grid(dataset: &Dataset, config: &TestConfig) -> Result<Vec<f64>> {
    let z = dataset.z();
    let lo = stats::quantile(z, config.grid_lower_quantile);
    let hi = stats::quantile(z, config.grid_upper_quantile);
    let grid: Vec<f64> = dataset
        .distinct_z()
        .into_iter()
        .filter(|&v| v >= lo && v <= hi)
        .collect();
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(grid)
}

/// Evaluate the rank-CUSUM process over a candidate grid. The residual ranks
/// come from the null fit and are shared by every grid point.
pub fn rn_process(null_fit: &NullFit, dataset: &Dataset, tau_grid: &[f64]) -> Result<Vec<f64>> {
    if tau_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let (zmin, zmax) = dataset.z_range();
    for &tau in tau_grid {
        if tau < zmin || tau > zmax {
            return Err(Error::TauOutOfRange {
                tau,
                min: zmin,
                max: zmax,
            });
        }
    }
    let n = dataset.n();
    let z = dataset.z();
    let scores: Vec<f64> = null_fit
        .residual_ecdf
        .iter()
        .map(|&u| SQRT_12 * (u - 0.5))
        .collect();
    let sqrt_n = (n as f64).sqrt();
    Ok(tau_grid
        .iter()
        .map(|&tau| {
            let mut acc = 0.0;
            for i in 0..n {
                if z[i] <= tau {
                    acc += scores[i] * (z[i] - tau);
                }
            }
            acc / sqrt_n
        })
        .collect())
}

/// Sup of the absolute process over the grid (zero for an empty path).
pub fn test_statistic(process_path: &[f64]) -> f64 {
    process_path.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Wild bootstrap calibration of the sup statistic.
///
/// Each replicate draws multipliers `u_i = v_i w_i` with `v_i` standard
/// normal and `w_i` an independent sign, and evaluates
/// `R*(tau) = n^{-1/2} sum_i u_i sqrt(12) (Fhat(e_i) - 1/2)
///            [(z_i - tau) I(z_i <= tau) - c_phi s1n(tau)' S_wn^{-1} w_i]`
/// with `s1n(tau) = n^{-1} sum_i sqrt(12) fhat(e_i) w_i (z_i - tau) I(z_i <= tau)`.
/// Everything that does not depend on the multipliers is computed once.
pub fn wild_bootstrap(
    null_fit: &NullFit,
    dataset: &Dataset,
    config: &TestConfig,
) -> Result<CusumTestResult> {
    wild_bootstrap_impl(null_fit, dataset, config, None)
}

/// Bootstrap with caller-supplied multipliers, for diagnostics and tests.
/// `multipliers(rep)` must return `n` values for replicate `rep`.
#[doc(hidden)]
pub fn wild_bootstrap_with_multipliers(
    null_fit: &NullFit,
    dataset: &Dataset,
    config: &TestConfig,
    multipliers: &(dyn Fn(usize) -> Vec<f64> + Sync),
) -> Result<CusumTestResult> {
    wild_bootstrap_impl(null_fit, dataset, config, Some(multipliers))
}

fn wild_bootstrap_impl(
    null_fit: &NullFit,
    dataset: &Dataset,
    config: &TestConfig,
    multipliers: Option<&(dyn Fn(usize) -> Vec<f64> + Sync)>,
) -> Result<CusumTestResult> {
    config.validate()?;
    let n = dataset.n();
    let z = dataset.z();
    let w = null_design(dataset);
    let q = w.ncols();

    let tau_grid = default_tau_grid(dataset, config)?;
    let process_path = rn_process(null_fit, dataset, &tau_grid)?;
    let statistic = test_statistic(&process_path);

    let chol = null_fit
        .design_second_moment
        .clone()
        .cholesky()
        .ok_or(Error::SingularMatrix {
            context: "null design second-moment matrix",
        })?;

    // centered rank scores sqrt(12) (Fhat - 1/2), fixed across replicates
    let scores: Vec<f64> = null_fit
        .residual_ecdf
        .iter()
        .map(|&u| SQRT_12 * (u - 0.5))
        .collect();
    let density = &null_fit.residual_density;
    let c_phi = null_fit.c_phi_hat;

    let mut rows = vec![0.0; tau_grid.len() * n];
    let mut s1n = DVector::zeros(q);
    for (t, &tau) in tau_grid.iter().enumerate() {
        s1n.fill(0.0);
        for i in 0..n {
            if z[i] <= tau {
                let weight = SQRT_12 * density[i] * (z[i] - tau);
                for j in 0..q {
                    s1n[j] += w[(i, j)] * weight;
                }
            }
        }
        s1n /= n as f64;
        let projection = chol.solve(&s1n);
        for i in 0..n {
            let hinge_weight = if z[i] <= tau { z[i] - tau } else { 0.0 };
            let proj_i: f64 = (0..q).map(|j| projection[j] * w[(i, j)]).sum();
            rows[t * n + i] = scores[i] * (hinge_weight - c_phi * proj_i);
        }
    }

    let bootstrap_stats = match multipliers {
        None => bootstrap_sup_stats(&rows, n, config.nb, config.seed),
        Some(gen) => bootstrap_sup_stats_with(&rows, n, config.nb, gen),
    };
    let p_value = bootstrap_p_value(&bootstrap_stats, statistic);

    Ok(CusumTestResult {
        statistic,
        tau_grid,
        process_path,
        bootstrap_stats,
        p_value,
        bandwidth: null_fit.bandwidth,
        seed: config.seed,
    })
}

/// Sup statistics of `nb` multiplier-bootstrap replicates over precomputed
/// rows (grid-major, each of length `n`). Replicate `b` derives its stream
/// from `(seed, b)`, so the result is independent of the parallel schedule.
pub(crate) fn bootstrap_sup_stats(rows: &[f64], n: usize, nb: usize, seed: u64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..nb)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::derive_rng(seed, tag::BOOTSTRAP, b as u64);
            let u: Vec<f64> = (0..n)
                .map(|_| {
                    let v: f64 = normal.sample(&mut rng);
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    v * sign
                })
                .collect();
            sup_over_rows(rows, n, &u)
        })
        .collect()
}

fn bootstrap_sup_stats_with(
    rows: &[f64],
    n: usize,
    nb: usize,
    multipliers: &(dyn Fn(usize) -> Vec<f64> + Sync),
) -> Vec<f64> {
    (0..nb)
        .into_par_iter()
        .map(|b| {
            let u = multipliers(b);
            assert_eq!(u.len(), n, "multiplier vector has wrong length");
            sup_over_rows(rows, n, &u)
        })
        .collect()
}

fn sup_over_rows(rows: &[f64], n: usize, u: &[f64]) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    rows.chunks_exact(n)
        .map(|row| {
            row.iter()
                .zip(u)
                .map(|(a, ui)| a * ui)
                .sum::<f64>()
                .abs()
                / sqrt_n
        })
        .fold(0.0, f64::max)
}

pub(crate) fn bootstrap_p_value(stats: &[f64], observed: f64) -> f64 {
    let count = stats.iter().filter(|&&s| s >= observed).count();
    count as f64 / stats.len() as f64
}

use rand::Rng;

/// Convenience: null fit, grid, process and bootstrap in one call.
pub fn change_point_test(dataset: &Dataset, config: &TestConfig) -> Result<CusumTestResult> {
    let null_fit = fit_null(dataset, config)?;
    wild_bootstrap(&null_fit, dataset, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_dataset(n: usize) -> Dataset {
        let z: Vec<f64> = (0..n)
            .map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64)
            .collect();
        let y: Vec<f64> = z.iter().map(|&zi| 3.0 + 2.5 * zi).collect();
        Dataset::from_columns(y, &[vec![1.0; n]], z).unwrap()
    }

    #[test]
    fn null_fit_on_noiseless_linear_data_has_tiny_residuals() {
        let ds = linear_dataset(60);
        let nf = fit_null(&ds, &TestConfig::default()).unwrap();
        let max = nf.residuals.iter().fold(0f64, |a, r| a.max(r.abs()));
        assert!(max < 1e-8, "max residual {max}");
    }

    #[test]
    fn ecdf_is_permutation_of_rank_grid() {
        use rand::Rng;
        let n = 40;
        let mut rng = rng::derive_rng(5, 1, 0);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = z
            .iter()
            .map(|&zi| 1.0 + zi + rng.random_range(-1.0..1.0))
            .collect();
        let ds = Dataset::from_columns(y, &[vec![1.0; n]], z).unwrap();
        let nf = fit_null(&ds, &TestConfig::default()).unwrap();
        let mut sorted = nf.residual_ecdf.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let denom = (n + 1) as f64;
        for (k, v) in sorted.iter().enumerate() {
            assert!((v - (k + 1) as f64 / denom).abs() < 1e-12);
        }
        assert!(sorted.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn process_vanishes_at_minimum_z() {
        let ds = linear_dataset(30);
        let nf = fit_null(&ds, &TestConfig::default()).unwrap();
        let (zmin, _) = ds.z_range();
        let path = rn_process(&nf, &ds, &[zmin]).unwrap();
        assert_eq!(path[0], 0.0);
    }

    #[test]
    fn process_hand_computed_small_case() {
        // four observations with chosen ranks: build the null fit by hand
        let z = vec![-1.5, -0.5, 0.5, 1.5];
        let ds = Dataset::from_columns(vec![0.0; 4], &[], z.clone()).unwrap();
        let residuals = vec![0.1, 0.2, 0.3, 0.4]; // ranks 1..4
        let ecdf: Vec<f64> = vec![1.0 / 5.0, 2.0 / 5.0, 3.0 / 5.0, 4.0 / 5.0];
        let nf = NullFit {
            coefficients: vec![0.0],
            residuals,
            residual_ecdf: ecdf.clone(),
            residual_density: vec![0.25; 4],
            design_second_moment: DMatrix::identity(1, 1),
            c_phi_hat: 1.0,
            bandwidth: 0.5,
        };
        let tau = 0.5;
        let path = rn_process(&nf, &ds, &[tau]).unwrap();
        // direct summation oracle
        let mut expected = 0.0;
        for i in 0..4 {
            if z[i] <= tau {
                expected += SQRT_12 * (ecdf[i] - 0.5) * (z[i] - tau);
            }
        }
        expected /= 4f64.sqrt();
        assert!((path[0] - expected).abs() < 1e-14);
        assert!((path[0] - 0.5 * SQRT_12 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn statistic_is_sup_of_absolute_path() {
        assert_eq!(test_statistic(&[0.1, -0.9, 0.4]), 0.9);
        assert_eq!(test_statistic(&[0.0, 0.0]), 0.0);
        assert_eq!(test_statistic(&[]), 0.0);
    }

    #[test]
    fn zero_multipliers_give_zero_bootstrap_stats() {
        use rand::Rng;
        let n = 50;
        let mut rng = rng::derive_rng(5, 2, 0);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = z
            .iter()
            .map(|&zi| 3.0 + 2.5 * zi - 4.0 * (zi - 0.5f64).max(0.0) + rng.random_range(-0.1..0.1))
            .collect();
        let ds = Dataset::from_columns(y, &[vec![1.0; n]], z).unwrap();
        let config = TestConfig {
            nb: 8,
            ..TestConfig::default()
        };
        let nf = fit_null(&ds, &config).unwrap();
        let result =
            wild_bootstrap_with_multipliers(&nf, &ds, &config, &|_| vec![0.0; n]).unwrap();
        assert!(result.statistic > 0.0);
        assert!(result.bootstrap_stats.iter().all(|&s| s == 0.0));
        assert_eq!(result.p_value, 0.0);
    }
}
