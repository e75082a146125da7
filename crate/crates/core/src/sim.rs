//! Monte Carlo study harness: data generators for the reference bent-line
//! scenarios, operating-characteristic summaries for the two estimators, and
//! size/power grids for the two existence tests.
//!
//! Replicates are embarrassingly parallel; every replicate derives its random
//! stream from (seed, stream tag, replicate index), so reports are identical
//! regardless of the parallel schedule.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bent::{self, FitConfig};
use crate::cusum::{self, TestConfig};
use crate::data::{BentLineParams, Dataset};
use crate::error::Result;
use crate::ls;
use crate::rng::{self, tag};
use crate::stats;

/// Error law of the generated data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ErrorKind {
    /// Standard normal errors.
    Normal,
    /// Student t with three degrees of freedom.
    T3,
    /// Standard normal with each observation independently replaced by a
    /// standard Cauchy draw with the given probability.
    ContaminatedNormal { rate: f64 },
}

impl ErrorKind {
    pub fn contaminated(rate: f64) -> Self {
        ErrorKind::ContaminatedNormal { rate }
    }

    pub fn label(&self) -> String {
        match self {
            ErrorKind::Normal => "normal".to_string(),
            ErrorKind::T3 => "t3".to_string(),
            ErrorKind::ContaminatedNormal { .. } => "contaminated".to_string(),
        }
    }
}

/// Drifting-alternative scaling of the hinge coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LocalAlt {
    /// Multiply the hinge coefficient by `n^{-1/2}`.
    RootN,
    /// Multiply the hinge coefficient by `n^{-1/2} a_n` for a caller-chosen
    /// divergent factor `a_n`.
    RootNTimes { a_n: f64 },
}

/// One simulation scenario. The threshold covariate is Uniform(-2, 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub reps: usize,
    pub error_kind: ErrorKind,
    pub true_params: BentLineParams,
    /// Replaces the hinge coefficient when set (used for size/power grids).
    pub gamma_override: Option<f64>,
    pub local_alt: Option<LocalAlt>,
    pub seed: u64,
}

impl SimScenario {
    /// Reference scenario: intercept 3, slope 2.5, slope change -4,
    /// changepoint 0.5, n = 200.
    pub fn reference(error_kind: ErrorKind, reps: usize, seed: u64) -> Self {
        SimScenario {
            n: 200,
            reps,
            error_kind,
            true_params: BentLineParams::new(vec![3.0], 2.5, -4.0, 0.5),
            gamma_override: None,
            local_alt: None,
            seed,
        }
    }

    /// Hinge coefficient actually used by the generator.
    pub fn effective_gamma(&self) -> f64 {
        let gamma = self.gamma_override.unwrap_or(self.true_params.gamma);
        let scale = match self.local_alt {
            None => 1.0,
            Some(LocalAlt::RootN) => (self.n as f64).powf(-0.5),
            Some(LocalAlt::RootNTimes { a_n }) => (self.n as f64).powf(-0.5) * a_n,
        };
        gamma * scale
    }

    /// True parameter vector seen by the estimators (hinge coefficient after
    /// overrides and local-alternative scaling).
    pub fn effective_params(&self) -> BentLineParams {
        let mut p = self.true_params.clone();
        p.gamma = self.effective_gamma();
        p
    }
}

pub(crate) fn draw_errors(kind: ErrorKind, n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, usize) {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    match kind {
        ErrorKind::Normal => ((0..n).map(|_| normal.sample(rng)).collect(), 0),
        ErrorKind::T3 => {
            let t3 = StudentT::new(3.0).expect("t3");
            ((0..n).map(|_| t3.sample(rng)).collect(), 0)
        }
        ErrorKind::ContaminatedNormal { rate } => {
            let cauchy = Cauchy::new(0.0, 1.0).expect("cauchy");
            let mut contaminated = 0;
            let errors = (0..n)
                .map(|_| {
                    // draw the normal first so the stream length per
                    // observation is fixed
                    let base = normal.sample(rng);
                    if rng.random::<f64>() < rate {
                        contaminated += 1;
                        cauchy.sample(rng)
                    } else {
                        base
                    }
                })
                .collect();
            (errors, contaminated)
        }
    }
}

/// Generate one replicate of a scenario. Deterministic in
/// (scenario.seed, rep_index).
pub fn generate(scenario: &SimScenario, rep_index: u64) -> Dataset {
    let mut rng = rng::derive_rng(scenario.seed, tag::SIM_DATA, rep_index);
    let n = scenario.n;
    let params = scenario.effective_params();

    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (errors, _) = draw_errors(scenario.error_kind, n, &mut rng);
    let y: Vec<f64> = (0..n)
        .map(|i| {
            params.alpha[0] + params.beta * z[i]
                + params.gamma * (z[i] - params.tau).max(0.0)
                + errors[i]
        })
        .collect();
    Dataset::from_columns(y, &[vec![1.0; n]], z).expect("generated data is valid")
}

/// Which estimator produced a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Rank,
    Ls,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Rank => "rank",
            Method::Ls => "ls",
        }
    }
}

/// Operating characteristics of one parameter under one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationRow {
    pub case: String,
    pub method: String,
    pub parameter: String,
    pub bias: f64,
    /// Absent when fewer than two replicates converged.
    pub sd: Option<f64>,
    /// Mean of the model-based standard errors.
    pub ese: f64,
    pub mse: f64,
    /// Coverage of the nominal-level confidence intervals.
    pub cp: f64,
    /// Mean confidence-interval length.
    pub al: f64,
    pub reps_used: usize,
}

/// Count of replicates a method failed to fit (error or no convergence).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureCount {
    pub case: String,
    pub method: String,
    pub failed: usize,
    pub total: usize,
}

/// One size/power cell of the test study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestCell {
    pub case: String,
    pub method: String,
    pub gamma: f64,
    pub rejection_rate: f64,
    pub reps: usize,
}

/// One point of the bandwidth sensitivity sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub case: String,
    pub bandwidth_mult: f64,
    pub type_i_error: f64,
    pub reps: usize,
}

/// Aggregated study output; unused sections stay empty.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimReport {
    pub estimation: Vec<EstimationRow>,
    pub failures: Vec<FailureCount>,
    pub test_cells: Vec<TestCell>,
    pub sweep: Vec<SweepPoint>,
}

impl SimReport {
    pub fn merge(mut self, other: SimReport) -> SimReport {
        self.estimation.extend(other.estimation);
        self.failures.extend(other.failures);
        self.test_cells.extend(other.test_cells);
        self.sweep.extend(other.sweep);
        self
    }
}

struct RepEstimates {
    estimates: Vec<f64>,
    ses: Vec<f64>,
    covers: Vec<bool>,
    lengths: Vec<f64>,
}

fn collect_fit(
    fit: &crate::data::BentLineFit,
    truth: &[f64],
) -> RepEstimates {
    let mut estimates = fit.theta();
    estimates.push(fit.params.tau);
    let mut ses = fit.theta_standard_errors();
    ses.push(fit.se_tau);
    let mut intervals = fit.theta_confidence_intervals();
    intervals.push(fit.ci_tau);
    let covers: Vec<bool> = intervals
        .iter()
        .zip(truth)
        .map(|((lo, hi), t)| lo <= t && t <= hi)
        .collect();
    let lengths: Vec<f64> = intervals.iter().map(|(lo, hi)| hi - lo).collect();
    RepEstimates {
        estimates,
        ses,
        covers,
        lengths,
    }
}

/// Fit both estimators on every replicate of a scenario and summarize
/// bias, spread, model-based standard errors, mean squared error, interval
/// coverage and interval length per parameter. Replicates where an estimator
/// errors or does not converge are counted in `failures` and excluded from
/// that estimator's summaries.
pub fn run_estimation_study(scenario: &SimScenario, config: &FitConfig) -> SimReport {
    let truth_params = scenario.effective_params();
    let p = truth_params.alpha.len();
    let mut truth = truth_params.alpha.clone();
    truth.push(truth_params.beta);
    truth.push(truth_params.gamma);
    truth.push(truth_params.tau);

    let results: Vec<(Option<RepEstimates>, Option<RepEstimates>)> = (0..scenario.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let dataset = generate(scenario, rep);
            let rank = bent::fit_bent_line(&dataset, config)
                .ok()
                .filter(|f| f.converged)
                .map(|f| collect_fit(&f, &truth));
            let ls_fit = ls::fit_ls_bent_line(&dataset, config)
                .ok()
                .filter(|f| f.converged)
                .map(|f| collect_fit(&f, &truth));
            (rank, ls_fit)
        })
        .collect();

    let case = scenario.error_kind.label();
    let parameter_names: Vec<String> = (0..p)
        .map(|j| format!("alpha_{j}"))
        .chain(["beta".to_string(), "gamma".to_string(), "tau".to_string()])
        .collect();

    let mut report = SimReport::default();
    for (method, pick) in [
        (Method::Rank, 0usize),
        (Method::Ls, 1usize),
    ] {
        let kept: Vec<&RepEstimates> = results
            .iter()
            .filter_map(|pair| {
                if pick == 0 {
                    pair.0.as_ref()
                } else {
                    pair.1.as_ref()
                }
            })
            .collect();
        let failed = scenario.reps - kept.len();
        report.failures.push(FailureCount {
            case: case.clone(),
            method: method.label().to_string(),
            failed,
            total: scenario.reps,
        });
        for (idx, name) in parameter_names.iter().enumerate() {
            let estimates: Vec<f64> = kept.iter().map(|r| r.estimates[idx]).collect();
            if estimates.is_empty() {
                continue;
            }
            let target = truth[idx];
            let bias = stats::mean(&estimates) - target;
            let sd = stats::sample_sd(&estimates);
            let ese = stats::mean(&kept.iter().map(|r| r.ses[idx]).collect::<Vec<_>>());
            let mse = stats::mean(
                &estimates
                    .iter()
                    .map(|e| (e - target) * (e - target))
                    .collect::<Vec<_>>(),
            );
            let cp = kept.iter().filter(|r| r.covers[idx]).count() as f64 / kept.len() as f64;
            let al = stats::mean(&kept.iter().map(|r| r.lengths[idx]).collect::<Vec<_>>());
            report.estimation.push(EstimationRow {
                case: case.clone(),
                method: method.label().to_string(),
                parameter: name.clone(),
                bias,
                sd,
                ese,
                mse,
                cp,
                al,
                reps_used: kept.len(),
            });
        }
    }
    report
}

/// Options for the size/power grid of the two existence tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestStudyOptions {
    pub cases: Vec<ErrorKind>,
    pub gammas: Vec<f64>,
    pub n: usize,
    pub reps: usize,
    pub nb: usize,
    /// Nominal significance level.
    pub level: f64,
    pub bandwidth_mult: f64,
    pub seed: u64,
}

impl Default for TestStudyOptions {
    fn default() -> Self {
        TestStudyOptions {
            cases: vec![
                ErrorKind::Normal,
                ErrorKind::T3,
                ErrorKind::contaminated(0.10),
            ],
            gammas: vec![0.0, -2.0, -1.0, 1.0, 2.0],
            n: 200,
            reps: 1000,
            nb: 1000,
            level: 0.05,
            bandwidth_mult: 1.06,
            seed: 0,
        }
    }
}

/// Rejection rate of both tests over a (case, gamma) grid at the configured
/// level.
pub fn run_test_study(options: &TestStudyOptions) -> Result<SimReport> {
    let mut report = SimReport::default();
    for (case_idx, &case) in options.cases.iter().enumerate() {
        for (gamma_idx, &gamma) in options.gammas.iter().enumerate() {
            let cell_seed = rng::derive_seed(
                options.seed,
                tag::TEST_STUDY,
                (case_idx * 1000 + gamma_idx) as u64,
            );
            let scenario = SimScenario {
                n: options.n,
                reps: options.reps,
                error_kind: case,
                true_params: BentLineParams::new(vec![3.0], 2.5, -4.0, 0.5),
                gamma_override: Some(gamma),
                local_alt: None,
                seed: cell_seed,
            };
            let (rank_rate, ls_rate) = rejection_rates(&scenario, options)?;
            report.test_cells.push(TestCell {
                case: case.label(),
                method: Method::Rank.label().to_string(),
                gamma,
                rejection_rate: rank_rate,
                reps: options.reps,
            });
            report.test_cells.push(TestCell {
                case: case.label(),
                method: Method::Ls.label().to_string(),
                gamma,
                rejection_rate: ls_rate,
                reps: options.reps,
            });
        }
    }
    Ok(report)
}

fn rejection_rates(scenario: &SimScenario, options: &TestStudyOptions) -> Result<(f64, f64)> {
    let outcomes: Vec<(bool, bool)> = (0..scenario.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let dataset = generate(scenario, rep);
            let config = TestConfig {
                nb: options.nb,
                bandwidth_mult: options.bandwidth_mult,
                seed: rng::derive_seed(scenario.seed, tag::BOOTSTRAP, rep),
                ..TestConfig::default()
            };
            let rank_reject = cusum::change_point_test(&dataset, &config)
                .map(|r| r.p_value <= options.level)
                .unwrap_or(false);
            let ls_reject = ls::ls_cusum_test(&dataset, &config)
                .map(|r| r.p_value <= options.level)
                .unwrap_or(false);
            (rank_reject, ls_reject)
        })
        .collect();
    let reps = outcomes.len() as f64;
    let rank_rate = outcomes.iter().filter(|o| o.0).count() as f64 / reps;
    let ls_rate = outcomes.iter().filter(|o| o.1).count() as f64 / reps;
    Ok((rank_rate, ls_rate))
}

/// Options for the bandwidth sensitivity sweep (null model, size only).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOptions {
    pub case: ErrorKind,
    pub c_values: Vec<f64>,
    pub n: usize,
    pub reps: usize,
    pub nb: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            case: ErrorKind::Normal,
            c_values: vec![0.1, 0.5, 1.0, 1.5, 2.0],
            n: 200,
            reps: 100,
            nb: 500,
            level: 0.05,
            seed: 0,
        }
    }
}

/// Type-I error of the rank-based test at each bandwidth multiplier.
pub fn bandwidth_sweep(options: &SweepOptions) -> Result<SimReport> {
    let mut report = SimReport::default();
    for (c_idx, &c) in options.c_values.iter().enumerate() {
        let cell_seed = rng::derive_seed(options.seed, tag::SWEEP, c_idx as u64);
        let scenario = SimScenario {
            n: options.n,
            reps: options.reps,
            error_kind: options.case,
            true_params: BentLineParams::new(vec![3.0], 2.5, -4.0, 0.5),
            gamma_override: Some(0.0),
            local_alt: None,
            seed: cell_seed,
        };
        let rejections: usize = (0..options.reps as u64)
            .into_par_iter()
            .map(|rep| {
                let dataset = generate(&scenario, rep);
                let config = TestConfig {
                    nb: options.nb,
                    bandwidth_mult: c,
                    seed: rng::derive_seed(cell_seed, tag::BOOTSTRAP, rep),
                    ..TestConfig::default()
                };
                usize::from(
                    cusum::change_point_test(&dataset, &config)
                        .map(|r| r.p_value <= options.level)
                        .unwrap_or(false),
                )
            })
            .sum();
        report.sweep.push(SweepPoint {
            case: options.case.label(),
            bandwidth_mult: c,
            type_i_error: rejections as f64 / options.reps as f64,
            reps: options.reps,
        });
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV serialization of the estimation rows (one row per parameter, method
/// and case) with a trailing failure count per method.
pub fn estimation_csv(report: &SimReport) -> String {
    let mut out = String::from("case,method,parameter,bias,sd,ese,mse,cp,al,reps_used,failures\n");
    for row in &report.estimation {
        let failures = report
            .failures
            .iter()
            .find(|f| f.case == row.case && f.method == row.method)
            .map(|f| f.failed)
            .unwrap_or(0);
        out.push_str(&format!(
            "{},{},{},{:.6},{},{:.6},{:.6},{:.4},{:.6},{},{}\n",
            row.case,
            row.method,
            row.parameter,
            row.bias,
            fmt_opt(row.sd),
            row.ese,
            row.mse,
            row.cp,
            row.al,
            row.reps_used,
            failures
        ));
    }
    out
}

/// CSV serialization of the size/power cells.
pub fn test_csv(report: &SimReport) -> String {
    let mut out = String::from("case,method,gamma,rejection_rate,reps\n");
    for cell in &report.test_cells {
        out.push_str(&format!(
            "{},{},{},{:.4},{}\n",
            cell.case, cell.method, cell.gamma, cell.rejection_rate, cell.reps
        ));
    }
    out
}

/// CSV serialization of the bandwidth sweep.
pub fn sweep_csv(report: &SimReport) -> String {
    let mut out = String::from("case,bandwidth_mult,type_i_error,reps\n");
    for point in &report.sweep {
        out.push_str(&format!(
            "{},{},{:.4},{}\n",
            point.case, point.bandwidth_mult, point.type_i_error, point.reps
        ));
    }
    out
}
