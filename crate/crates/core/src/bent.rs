//! Bent-line estimation with an unknown changepoint.
//!
//! The hinge term `(z - tau)_+` is not differentiable in `tau`, so the fit
//! iterates a linear reparameterization: expanding the hinge to first order
//! around a working value `tau0` introduces the extra regressors
//! `(z - tau0)_+` and `-I(z > tau0)` with nuisance coefficient
//! `eta = gamma (tau - tau0)`. Each pass fits the linearized model, then
//! moves the working changepoint by `eta_hat / gamma_hat` until the
//! regression coefficients stabilize. The changepoint standard error follows
//! from the delta method on that update, using the (gamma, eta) covariance
//! block of the final linearized fit.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BentLineFit, BentLineParams, Dataset};
use crate::design::{self, DesignFit};
use crate::error::{Error, Result};
use crate::rank::{self, ScoreFunction};
use crate::rng::{self, tag};
use crate::stats;

/// Initial changepoint choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TauInit {
    /// Profile pre-scan over the interior deciles of `z`, keeping the decile
    /// with the smallest fixed-changepoint objective.
    Auto,
    Fixed(f64),
}

/// Controls for the iterative fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub tau_init: TauInit,
    /// Warm-start value for the nuisance coefficient in the first pass.
    pub eta_init: f64,
    /// Sup-norm tolerance on the regression coefficients.
    pub tol: f64,
    pub max_iter: usize,
    /// Confidence level for all reported intervals.
    pub ci_level: f64,
    /// Below this magnitude of the slope change the changepoint is declared
    /// unidentified.
    pub gamma_floor: f64,
    /// Multiplier applied to a changepoint step that would leave the observed
    /// range of `z` before clamping.
    pub damping: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tau_init: TauInit::Auto,
            eta_init: 0.01,
            tol: 1e-5,
            max_iter: 100,
            ci_level: 0.95,
            gamma_floor: 1e-8,
            damping: 1.0,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidConfig("ci_level must lie in (0, 1)".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig("damping must lie in (0, 1]".into()));
        }
        if !self.eta_init.is_finite() || !(self.gamma_floor >= 0.0) {
            return Err(Error::InvalidConfig("invalid eta_init or gamma_floor".into()));
        }
        Ok(())
    }
}

/// Design matrix of the linearized model at a working changepoint:
/// columns `[x | z | (z - tau0)_+ | -I(z > tau0)]`, with the hinge and the
/// indicator using the strict inequality `z > tau0`.
pub fn linearized_design(dataset: &Dataset, tau0: f64) -> Result<DMatrix<f64>> {
    let (zmin, zmax) = dataset.z_range();
    if tau0 < zmin || tau0 > zmax {
        return Err(Error::TauOutOfRange {
            tau: tau0,
            min: zmin,
            max: zmax,
        });
    }
    let n = dataset.n();
    let p = dataset.p();
    let x = dataset.x();
    let z = dataset.z();
    Ok(DMatrix::from_fn(n, p + 3, |i, j| {
        if j < p {
            x[(i, j)]
        } else if j == p {
            z[i]
        } else if j == p + 1 {
            if z[i] > tau0 {
                z[i] - tau0
            } else {
                0.0
            }
        } else if z[i] > tau0 {
            -1.0
        } else {
            0.0
        }
    }))
}

/// Design of the fixed-changepoint model `[x | z | (z - tau)_+]`.
pub(crate) fn hinge_design(dataset: &Dataset, tau: f64) -> DMatrix<f64> {
    let n = dataset.n();
    let p = dataset.p();
    let x = dataset.x();
    let z = dataset.z();
    DMatrix::from_fn(n, p + 2, |i, j| {
        if j < p {
            x[(i, j)]
        } else if j == p {
            z[i]
        } else if z[i] > tau {
            z[i] - tau
        } else {
            0.0
        }
    })
}

/// Observation counts at or below / strictly above a working changepoint.
pub(crate) fn strata_counts(z: &[f64], tau: f64) -> (usize, usize) {
    let below = z.iter().filter(|&&v| v <= tau).count();
    (below, z.len() - below)
}

fn check_strata(z: &[f64], tau: f64) -> Result<()> {
    let (below, above) = strata_counts(z, tau);
    if below < 3 {
        return Err(Error::DegenerateStratum {
            side: "at or below",
            count: below,
        });
    }
    if above < 3 {
        return Err(Error::DegenerateStratum {
            side: "above",
            count: above,
        });
    }
    Ok(())
}

/// One fitting backend for the shared iteration: the rank estimator and the
/// least-squares baseline plug in here so both run under identical controls.
pub(crate) trait BentSolver: Sync {
    fn fit_design(
        &self,
        y: &[f64],
        design: &DMatrix<f64>,
        warm: Option<&[f64]>,
    ) -> Result<DesignFit>;

    /// Minimized fixed-changepoint objective (dispersion or RSS).
    fn profile_objective(&self, dataset: &Dataset, tau: f64) -> Result<f64>;
}

pub(crate) struct RankSolver {
    pub score: ScoreFunction,
}

impl BentSolver for RankSolver {
    fn fit_design(
        &self,
        y: &[f64],
        design: &DMatrix<f64>,
        warm: Option<&[f64]>,
    ) -> Result<DesignFit> {
        design::rank_fit_design_warm(y, design, self.score, warm)
    }

    fn profile_objective(&self, dataset: &Dataset, tau: f64) -> Result<f64> {
        let design = hinge_design(dataset, tau);
        let fit = design::rank_fit_design_warm(dataset.y(), &design, self.score, None)?;
        Ok(fit.objective)
    }
}

/// Fit the bent-line model by rank-based regression.
pub fn fit_bent_line(dataset: &Dataset, config: &FitConfig) -> Result<BentLineFit> {
    let solver = RankSolver {
        score: ScoreFunction::Wilcoxon,
    };
    run_bent_algorithm(dataset, config, &solver)
}

pub(crate) fn run_bent_algorithm(
    dataset: &Dataset,
    config: &FitConfig,
    solver: &dyn BentSolver,
) -> Result<BentLineFit> {
    config.validate()?;
    let n = dataset.n();
    let p = dataset.p();
    if n < p + 5 {
        return Err(Error::TooFewObservations {
            needed: p + 5,
            got: n,
        });
    }

    let distinct = dataset.distinct_z();
    let (zmin, zmax) = dataset.z_range();
    // clamp the working changepoint one observed spacing inside the range
    let clamp_lo = distinct[1];
    let clamp_hi = distinct[distinct.len() - 2];

    let mut tau = match config.tau_init {
        TauInit::Fixed(t) => {
            if t < zmin || t > zmax {
                return Err(Error::TauOutOfRange {
                    tau: t,
                    min: zmin,
                    max: zmax,
                });
            }
            t.clamp(clamp_lo, clamp_hi)
        }
        TauInit::Auto => auto_initial_tau(dataset, solver, clamp_lo, clamp_hi)?,
    };
    check_strata(dataset.z(), tau)?;

    // objective at the current working changepoint; steps must beat it
    let mut profile_bar = solver.profile_objective(dataset, tau)?;
    let min_step = 1e-9 * (zmax - zmin).max(1.0);
    let mut prev_theta: Option<Vec<f64>> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_fit: Option<DesignFit> = None;
    let mut final_tau = tau;

    // Analytic changepoint update with safeguards: a step that would leave
    // the range of z is damped and clamped; a step that does not strictly
    // improve the fixed-changepoint objective is halved up to 10 times and
    // otherwise rejected.
    let analytic_update = |tau: f64,
                           eta: f64,
                           gamma: f64,
                           bar: &mut f64|
     -> Result<f64> {
        let full_step_tau =
            propose_step(tau, eta, gamma, config.damping, zmin, zmax).clamp(clamp_lo, clamp_hi);
        check_strata(dataset.z(), full_step_tau)?;
        let mut step = full_step_tau - tau;
        for _halving in 0..=10 {
            let candidate = (tau + step).clamp(clamp_lo, clamp_hi);
            if let Ok(objective) = solver.profile_objective(dataset, candidate) {
                if objective < *bar - 1e-12 * (1.0 + bar.abs()) {
                    *bar = objective;
                    return Ok(candidate);
                }
            }
            step *= 0.5;
            if step.abs() < min_step {
                break;
            }
        }
        Ok(tau)
    };

    // When the analytic step stalls, probe nearby observed z values before
    // freezing: the profile objective is piecewise linear in tau with kinks
    // at the data, so a stalled step can sit on a shelf a few observations
    // away from the minimizing kink.
    let probe_escape = |tau: f64, bar: &mut f64| -> Option<f64> {
        let anchor = match distinct.binary_search_by(|v| v.partial_cmp(&tau).unwrap()) {
            Ok(i) => i,
            Err(i) => i.min(distinct.len() - 1),
        };
        for offset in [1isize, 2, 4, 8, 16] {
            for sign in [-1isize, 1] {
                let idx = anchor as isize + sign * offset;
                if idx < 0 || idx as usize >= distinct.len() {
                    continue;
                }
                let candidate = distinct[idx as usize].clamp(clamp_lo, clamp_hi);
                if candidate == tau || check_strata(dataset.z(), candidate).is_err() {
                    continue;
                }
                if let Ok(objective) = solver.profile_objective(dataset, candidate) {
                    if objective < *bar - 1e-12 * (1.0 + bar.abs()) {
                        *bar = objective;
                        return Some(candidate);
                    }
                }
            }
        }
        None
    };
    let mut probe_budget = 5usize;

    for step_index in 1..=config.max_iter {
        iterations = step_index;
        let design = linearized_design(dataset, tau)?;

        // first pass: warm-start from least squares with the configured
        // initial nuisance coefficient; later passes re-fit from scratch so
        // that the fit is a deterministic function of the working changepoint
        let warm = if step_index == 1 {
            rank::ols_solve(dataset.y(), &design).ok().map(|coef| {
                let mut v: Vec<f64> = coef.iter().cloned().collect();
                v[p + 2] = config.eta_init;
                v
            })
        } else {
            None
        };

        let fit = solver.fit_design(dataset.y(), &design, warm.as_deref())?;
        let gamma = fit.coefficients[p + 1];
        let eta = fit.coefficients[p + 2];
        if gamma.abs() < config.gamma_floor {
            return Err(Error::ChangePointUnidentified { gamma });
        }

        let theta: Vec<f64> = fit.coefficients[..p + 2].to_vec();
        if let Some(prev) = &prev_theta {
            let change = sup_diff(&theta, prev);
            if change < config.tol {
                // before declaring convergence, check that no nearby kink
                // still beats the current profile value
                if probe_budget > 0 {
                    probe_budget -= 1;
                    if let Some(escaped) = probe_escape(tau, &mut profile_bar) {
                        // a jump to a different kink is not a refinement
                        // step: drop the stability history and settle anew
                        prev_theta = None;
                        tau = escaped;
                        final_tau = tau;
                        last_fit = Some(fit);
                        continue;
                    }
                }
                converged = true;
                final_tau = analytic_update(tau, eta, gamma, &mut profile_bar)?;
                last_fit = Some(fit);
                break;
            }
        }
        prev_theta = Some(theta);

        tau = analytic_update(tau, eta, gamma, &mut profile_bar)?;
        final_tau = tau;
        last_fit = Some(fit);
    }

    let fit = last_fit.ok_or(Error::DidNotConverge {
        iterations,
        last_change: f64::INFINITY,
    })?;

    assemble_fit(dataset, config, fit, final_tau, iterations, converged)
}

fn assemble_fit(
    dataset: &Dataset,
    config: &FitConfig,
    fit: DesignFit,
    tau: f64,
    iterations: usize,
    converged: bool,
) -> Result<BentLineFit> {
    let p = dataset.p();
    let alpha = fit.coefficients[..p].to_vec();
    let beta = fit.coefficients[p];
    let gamma = fit.coefficients[p + 1];
    let eta_final = fit.coefficients[p + 2];

    let params = BentLineParams::new(alpha, beta, gamma, tau);

    let var_gamma = fit.covariance[(p + 1, p + 1)];
    let var_eta = fit.covariance[(p + 2, p + 2)];
    let cov_ge = fit.covariance[(p + 1, p + 2)];
    let se = se_tau(var_gamma, var_eta, cov_ge, gamma, eta_final)?;

    let zq = stats::normal_quantile(1.0 - (1.0 - config.ci_level) / 2.0);
    let ci_tau = (tau - zq * se, tau + zq * se);

    let residuals: Vec<f64> = (0..dataset.n())
        .map(|i| {
            dataset.y()[i]
                - params
                    .predict(&dataset.x_row(i), dataset.z()[i])
                    .expect("row dimensions match by construction")
        })
        .collect();

    Ok(BentLineFit {
        params,
        eta_final,
        covariance: fit.covariance,
        se_tau: se,
        ci_tau,
        scale_c_phi: fit.scale,
        ci_level: config.ci_level,
        iterations,
        converged,
        residuals,
    })
}

fn propose_step(tau: f64, eta: f64, gamma: f64, damping: f64, zmin: f64, zmax: f64) -> f64 {
    let mut step = eta / gamma;
    let raw = tau + step;
    if raw < zmin || raw > zmax {
        step *= damping;
    }
    tau + step
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn auto_initial_tau(
    dataset: &Dataset,
    solver: &dyn BentSolver,
    clamp_lo: f64,
    clamp_hi: f64,
) -> Result<f64> {
    let z = dataset.z();
    let mut candidates: Vec<f64> = (1..=9)
        .map(|d| stats::quantile(z, d as f64 / 10.0).clamp(clamp_lo, clamp_hi))
        .collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();

    let mut best: Option<(f64, f64)> = None;
    let mut last_err = None;
    for tau in candidates {
        if check_strata(z, tau).is_err() {
            continue;
        }
        match solver.profile_objective(dataset, tau) {
            Ok(objective) => {
                if best.map(|(_, b)| objective < b).unwrap_or(true) {
                    best = Some((tau, objective));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((tau, _)) => Ok(tau),
        None => Err(last_err.unwrap_or(Error::DegenerateStratum {
            side: "at or below",
            count: 0,
        })),
    }
}

/// Delta-method standard error of the changepoint estimate from the
/// covariance of the slope change `gamma` and the nuisance coefficient `eta`:
/// `SE = sqrt(Var(eta) + Var(gamma) r^2 + 2 r Cov(eta, gamma)) / |gamma|`
/// with `r = eta / gamma`. With `eta = 0` this reduces to `SE(eta) / |gamma|`.
pub fn se_tau(
    var_gamma: f64,
    var_eta: f64,
    cov_gamma_eta: f64,
    gamma_hat: f64,
    eta_hat: f64,
) -> Result<f64> {
    if gamma_hat == 0.0 {
        return Err(Error::ChangePointUnidentified { gamma: 0.0 });
    }
    let ratio = eta_hat / gamma_hat;
    let v = var_eta + var_gamma * ratio * ratio + 2.0 * ratio * cov_gamma_eta;
    let scale = var_eta.abs().max(var_gamma.abs()).max(1e-300);
    if v < 0.0 {
        if v > -1e-10 * scale {
            return Ok(0.0);
        }
        return Err(Error::NumericalDegeneracy(format!(
            "negative variance {v:.3e} for the changepoint estimate"
        )));
    }
    Ok(v.sqrt() / gamma_hat.abs())
}

/// Per-fold and total squared out-of-fold prediction error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KfoldReport {
    pub per_fold: Vec<f64>,
    pub total: f64,
}

/// K-fold cross-validated prediction error of the rank-based bent-line fit.
/// Folds come from a seeded shuffle, so the result is deterministic given the
/// seed.
pub fn kfold_prediction_error(
    dataset: &Dataset,
    k: usize,
    config: &FitConfig,
    seed: u64,
) -> Result<KfoldReport> {
    kfold_with(dataset, k, seed, |train| {
        fit_bent_line(train, config).map(|fit| fit.params)
    })
}

pub(crate) fn kfold_with(
    dataset: &Dataset,
    k: usize,
    seed: u64,
    fit: impl Fn(&Dataset) -> Result<BentLineParams> + Sync,
) -> Result<KfoldReport> {
    if k < 2 {
        return Err(Error::InvalidConfig("k must be at least 2".into()));
    }
    let n = dataset.n();
    if k > n {
        return Err(Error::InvalidConfig(format!(
            "k = {k} exceeds the number of observations {n}"
        )));
    }
    let needed = dataset.p() + 4;

    let mut indices: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    let mut rng = rng::derive_rng(seed, tag::KFOLD, 0);
    indices.shuffle(&mut rng);

    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let slice = indices[start..start + size].to_vec();
        if slice.len() < needed {
            return Err(Error::FoldTooSmall {
                fold,
                size: slice.len(),
                needed,
            });
        }
        if n - slice.len() < needed {
            return Err(Error::FoldTooSmall {
                fold,
                size: n - slice.len(),
                needed,
            });
        }
        start += size;
        folds.push(slice);
    }

    let per_fold: Result<Vec<f64>> = folds
        .par_iter()
        .map(|holdout| {
            let mut in_fold = vec![false; n];
            for &i in holdout {
                in_fold[i] = true;
            }
            let train_idx: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
            let train = dataset.subset(&train_idx)?;
            let params = fit(&train)?;
            let mut pe = 0.0;
            for &i in holdout {
                let pred = params.predict(&dataset.x_row(i), dataset.z()[i])?;
                let err = dataset.y()[i] - pred;
                pe += err * err;
            }
            Ok(pe)
        })
        .collect();
    let per_fold = per_fold?;
    let total = per_fold.iter().sum();
    Ok(KfoldReport { per_fold, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_dataset(n: usize) -> Dataset {
        let z: Vec<f64> = (0..n)
            .map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64)
            .collect();
        let y: Vec<f64> = z
            .iter()
            .map(|&zi| 3.0 + 2.5 * zi - 4.0 * (zi - 0.5f64).max(0.0))
            .collect();
        Dataset::from_columns(y, &[vec![1.0; n]], z).unwrap()
    }

    #[test]
    fn linearized_design_hand_values() {
        let ds = Dataset::from_columns(
            vec![0.0, 1.0, 2.0],
            &[],
            vec![-1.0, 0.0, 1.0],
        )
        .unwrap();
        let d = linearized_design(&ds, 0.0).unwrap();
        assert_eq!(d.ncols(), 3);
        assert_eq!((d[(0, 1)], d[(1, 1)], d[(2, 1)]), (0.0, 0.0, 1.0));
        assert_eq!((d[(0, 2)], d[(1, 2)], d[(2, 2)]), (0.0, 0.0, -1.0));
    }

    #[test]
    fn linearized_design_five_point_grid() {
        let z: Vec<f64> = vec![-2.0, -1.0, 0.0, 1.0, 2.0];
        let ds = Dataset::from_columns(vec![0.0; 5], &[], z).unwrap();
        let d = linearized_design(&ds, 0.5).unwrap();
        let hinge: Vec<f64> = (0..5).map(|i| d[(i, 1)]).collect();
        let ind: Vec<f64> = (0..5).map(|i| d[(i, 2)]).collect();
        assert_eq!(hinge, vec![0.0, 0.0, 0.0, 0.5, 1.5]);
        assert_eq!(ind, vec![0.0, 0.0, 0.0, -1.0, -1.0]);
    }

    #[test]
    fn linearized_design_at_max_z_is_degenerate_downstream() {
        let ds = grid_dataset(20);
        let (_, zmax) = ds.z_range();
        let d = linearized_design(&ds, zmax).unwrap();
        let p = ds.p();
        assert!(d.column(p + 1).iter().all(|&v| v == 0.0));
        assert!(d.column(p + 2).iter().all(|&v| v == 0.0));
        let err = design::rank_fit_design_warm(ds.y(), &d, ScoreFunction::Wilcoxon, None)
            .err()
            .unwrap();
        assert!(matches!(
            err,
            Error::ConstantColumn { .. } | Error::RankDeficient
        ));
    }

    #[test]
    fn linearized_design_rejects_tau_outside_range() {
        let ds = grid_dataset(20);
        assert!(matches!(
            linearized_design(&ds, 5.0),
            Err(Error::TauOutOfRange { .. })
        ));
    }

    #[test]
    fn noiseless_recovery() {
        let ds = grid_dataset(200);
        let fit = fit_bent_line(&ds, &FitConfig::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.params.alpha[0] - 3.0).abs() < 1e-4, "{:?}", fit.params);
        assert!((fit.params.beta - 2.5).abs() < 1e-4);
        assert!((fit.params.gamma + 4.0).abs() < 1e-4);
        assert!((fit.params.tau - 0.5).abs() < 1e-4);
        assert!(fit.eta_final.abs() < 1e-4);
    }

    #[test]
    fn se_tau_reduces_to_eta_se_over_gamma() {
        let se = se_tau(123.0, 0.04, -7.0, -4.0, 0.0).unwrap();
        assert!((se - 0.05).abs() < 1e-12);
    }

    #[test]
    fn se_tau_hand_evaluation() {
        // ratio = 0.01, v = 0.04 + 0.09 * 1e-4 + 2 * 0.01 * 0.01
        let se = se_tau(0.09, 0.04, 0.01, 2.0, 0.02).unwrap();
        let expected = (0.04 + 0.09 * 0.0001 + 2.0 * 0.01 * 0.01f64).sqrt() / 2.0;
        assert!((se - expected).abs() < 1e-14);
        assert!((se - 0.100_260_909_630_822_72).abs() < 1e-12);
    }

    #[test]
    fn se_tau_rejects_bad_variance() {
        assert!(matches!(
            se_tau(1.0, -0.5, 0.0, 1.0, 0.0),
            Err(Error::NumericalDegeneracy(_))
        ));
    }

    #[test]
    fn kfold_noiseless_is_tiny() {
        let ds = grid_dataset(120);
        let report = kfold_prediction_error(&ds, 4, &FitConfig::default(), 11).unwrap();
        assert_eq!(report.per_fold.len(), 4);
        assert!(report.total < 1e-8, "PE = {}", report.total);
    }

    #[test]
    fn kfold_rejects_small_folds() {
        let ds = grid_dataset(12);
        assert!(matches!(
            kfold_prediction_error(&ds, 6, &FitConfig::default(), 1),
            Err(Error::FoldTooSmall { .. })
        ));
    }
}
