//! Least-squares baseline: the same segmented iteration with ordinary least
//! squares in place of the rank fit, and the matching CUSUM-type existence
//! test whose bootstrap omits every residual-dependent term.
//!
//! The baseline shares the iteration controls of the rank estimator so that
//! performance differences between the two isolate the loss function.

use nalgebra::DMatrix;

use crate::bent::{self, BentSolver, FitConfig, KfoldReport};
use crate::cusum::{self, TestConfig};
use crate::data::{BentLineFit, CusumTestResult, Dataset};
use crate::design::{self, DesignFit};
use crate::error::{Error, Result};
use crate::rank;

/// Least-squares fit of the bent-line model: same iteration and reporting as
/// the rank estimator, so the two can be compared field by field.
pub type LsFit = BentLineFit;

pub(crate) struct LsSolver;

impl BentSolver for LsSolver {
    fn fit_design(
        &self,
        y: &[f64],
        design: &DMatrix<f64>,
        _warm: Option<&[f64]>,
    ) -> Result<DesignFit> {
        design::ols_fit_design(y, design)
    }

    fn profile_objective(&self, dataset: &Dataset, tau: f64) -> Result<f64> {
        let design = bent::hinge_design(dataset, tau);
        let fit = design::ols_fit_design(dataset.y(), &design)?;
        Ok(fit.objective)
    }
}

/// Fit the bent-line model by ordinary least squares.
pub fn fit_ls_bent_line(dataset: &Dataset, config: &FitConfig) -> Result<LsFit> {
    bent::run_bent_algorithm(dataset, config, &LsSolver)
}

/// K-fold prediction error of the least-squares bent-line fit, with the same
/// seeded folds as the rank version.
pub fn ls_kfold_prediction_error(
    dataset: &Dataset,
    k: usize,
    config: &FitConfig,
    seed: u64,
) -> Result<KfoldReport> {
    bent::kfold_with(dataset, k, seed, |train| {
        fit_ls_bent_line(train, config).map(|fit| fit.params)
    })
}

/// CUSUM-type existence test for the least-squares baseline.
///
/// The observed process cumulates raw null-model residuals,
/// `n^{-1/2} sum_i e_i (z_i - tau) I(z_i <= tau)`, and the bootstrap draws
/// `n^{-1/2} sum_i u_i [(z_i - tau) I(z_i <= tau) - s1n(tau)' S_wn^{-1} w_i]`
/// with `s1n(tau) = n^{-1} sum_i w_i (z_i - tau) I(z_i <= tau)`. The bootstrap
/// intentionally involves no residual weighting, density estimate, or scale
/// factor, so its statistics do not track the error variance.
pub fn ls_cusum_test(dataset: &Dataset, config: &TestConfig) -> Result<CusumTestResult> {
    config.validate()?;
    let n = dataset.n();
    let w = cusum::null_design(dataset);
    if n <= w.ncols() {
        return Err(Error::TooFewObservations {
            needed: w.ncols() + 1,
            got: n,
        });
    }

    let coef = rank::ols_solve(dataset.y(), &w)?;
    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            dataset.y()[i]
                - (0..w.ncols())
                    .map(|j| w[(i, j)] * coef[j])
                    .sum::<f64>()
        })
        .collect();

    let tau_grid = cusum::default_tau_grid(dataset, config)?;
    let z = dataset.z();
    let sqrt_n = (n as f64).sqrt();

    // observed process: raw residual CUSUM
    let process_path: Vec<f64> = tau_grid
        .iter()
        .map(|&tau| {
            let mut acc = 0.0;
            for i in 0..n {
                if z[i] <= tau {
                    acc += residuals[i] * (z[i] - tau);
                }
            }
            acc / sqrt_n
        })
        .collect();
    let statistic = cusum::test_statistic(&process_path);

    // bootstrap multiplier rows: no residual terms by construction
    let second_moment = cusum::second_moment(&w);
    let chol = second_moment.cholesky().ok_or(Error::SingularMatrix {
        context: "null design second-moment matrix",
    })?;

    let q = w.ncols();
    let mut rows = vec![0.0; tau_grid.len() * n];
    let mut s1n = nalgebra::DVector::zeros(q);
    for (t, &tau) in tau_grid.iter().enumerate() {
        s1n.fill(0.0);
        for i in 0..n {
            if z[i] <= tau {
                let weight = z[i] - tau;
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
            rows[t * n + i] = hinge_weight - proj_i;
        }
    }

    let bootstrap_stats = cusum::bootstrap_sup_stats(&rows, n, config.nb, config.seed);
    let p_value = cusum::bootstrap_p_value(&bootstrap_stats, statistic);

    Ok(CusumTestResult {
        statistic,
        tau_grid,
        process_path,
        bootstrap_stats,
        p_value,
        bandwidth: f64::NAN,
        seed: config.seed,
    })
}
