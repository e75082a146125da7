//! Robust bent-line regression with an unknown changepoint.
//!
//! The model is continuous and piecewise linear,
//! `y = alpha' x + beta z + gamma (z - tau)_+ + e`,
//! with the changepoint `tau` estimated jointly with the coefficients. The
//! crate provides:
//!
//! - a rank-based (Wilcoxon-score) estimator with Wald inference for every
//!   parameter including the changepoint ([`bent`]),
//! - the rank-regression primitives it builds on ([`rank`]),
//! - a wild-bootstrap weighted-CUSUM test for the existence of a changepoint
//!   that only fits the null model ([`cusum`]),
//! - a least-squares baseline with the same iteration and a matching test
//!   ([`ls`]),
//! - a Monte Carlo harness for operating characteristics, size/power grids
//!   and bandwidth sweeps ([`sim`]).

pub mod bent;
pub mod cusum;
pub mod data;
mod design;
pub mod error;
pub mod kde;
pub mod ls;
pub mod rank;
pub mod rng;
pub mod sim;
pub mod stats;

pub use bent::{fit_bent_line, kfold_prediction_error, linearized_design, se_tau, FitConfig, KfoldReport, TauInit};
pub use cusum::{change_point_test, default_tau_grid, fit_null, rn_process, test_statistic, wild_bootstrap, TestConfig};
pub use data::{BentLineFit, BentLineParams, CusumTestResult, Dataset, NullFit};
pub use error::{Error, Result};
pub use kde::Kernel;
pub use ls::{fit_ls_bent_line, ls_cusum_test, ls_kfold_prediction_error, LsFit};
pub use rank::{dispersion, estimate_c_phi, fit_rank_linear, ranks, RankLinearFit, ScoreFunction};
pub use sim::{
    bandwidth_sweep, generate, run_estimation_study, run_test_study, ErrorKind, Method, SimReport,
    SimScenario, SweepOptions, TestStudyOptions,
};

pub use nalgebra;
