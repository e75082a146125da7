//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by validation, fitting and testing routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("threshold covariate has only {distinct} distinct values; at least 3 are required")]
    TooFewDistinctThresholdValues { distinct: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("too few observations: need at least {needed}, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("design column {index} is constant; drop it or let the caller handle the intercept")]
    ConstantColumn { index: usize },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("changepoint {tau} outside threshold range [{min}, {max}]")]
    TauOutOfRange { tau: f64, min: f64, max: f64 },

    #[error(
        "slope change is numerically zero (|gamma| = {gamma:.3e}); the changepoint is not \
         identified -- run the changepoint existence test first"
    )]
    ChangePointUnidentified { gamma: f64 },

    #[error("only {count} observations {side} the working changepoint; at least 3 are required")]
    DegenerateStratum { side: &'static str, count: usize },

    #[error("solver did not converge within {iterations} iterations (last change {last_change:.3e})")]
    DidNotConverge {
        iterations: usize,
        last_change: f64,
    },

    #[error("residuals are degenerate (all equal); scale estimation is impossible")]
    DegenerateResiduals,

    #[error("matrix is numerically singular in {context}")]
    SingularMatrix { context: &'static str },

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("candidate grid is empty")]
    EmptyGrid,

    #[error("fold {fold} has {size} observations but at least {needed} are required")]
    FoldTooSmall {
        fold: usize,
        size: usize,
        needed: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
