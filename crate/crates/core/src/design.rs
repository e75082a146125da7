//! Internal plumbing shared by the estimators: fitting a full design matrix
//! that may contain one explicit constant column, and assembling the joint
//! covariance of all its coefficients.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rank::{self, ScoreFunction};

/// A fit of `y` on every column of a design matrix, with the coefficients in
/// design-column order regardless of how the intercept was estimated.
#[derive(Debug, Clone)]
pub(crate) struct DesignFit {
    pub coefficients: Vec<f64>,
    /// Joint covariance of all coefficients, design-column order.
    pub covariance: DMatrix<f64>,
    /// Scale estimate: rank scale parameter or residual standard deviation.
    pub scale: f64,
    /// Minimized objective: dispersion for the rank fit, residual sum of
    /// squares for least squares.
    pub objective: f64,
    /// Residuals `y - design . coefficients`.
    pub residuals: Vec<f64>,
}

/// Index and value of the single constant column, if any.
pub(crate) fn find_constant_column(design: &DMatrix<f64>) -> Result<Option<(usize, f64)>> {
    let mut found = None;
    for j in 0..design.ncols() {
        let col = design.column(j);
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            if first == 0.0 {
                // an all-zero column can never be fit
                return Err(Error::ConstantColumn { index: j });
            }
            if found.is_some() {
                return Err(Error::RankDeficient);
            }
            found = Some((j, first));
        }
    }
    Ok(found)
}

/// Rank-based fit of a full design. One constant column is allowed: it is
/// removed before the rank fit and receives the separately estimated location
/// coefficient. The joint covariance combines the slope covariance `V` with
/// the location row
/// `Var(a) = tau_S^2 / n + ubar' V ubar`, `Cov(a, b) = -(V ubar)'`,
/// where `ubar` holds the column means of the non-constant part.
pub(crate) fn rank_fit_design_warm(
    y: &[f64],
    design: &DMatrix<f64>,
    score: ScoreFunction,
    warm: Option<&[f64]>,
) -> Result<DesignFit> {
    let n = y.len();
    let q_total = design.ncols();
    let constant = find_constant_column(design)?;

    let slope_cols: Vec<usize> = (0..q_total)
        .filter(|&j| constant.map(|(c, _)| c != j).unwrap_or(true))
        .collect();
    if slope_cols.is_empty() {
        return Err(Error::InvalidConfig(
            "design has no non-constant columns".into(),
        ));
    }
    let u = DMatrix::from_fn(n, slope_cols.len(), |i, k| design[(i, slope_cols[k])]);
    let warm_slopes: Option<Vec<f64>> =
        warm.map(|full| slope_cols.iter().map(|&j| full[j]).collect());
    let fit = rank::fit_rank_linear_with_init(y, &u, score, warm_slopes.as_deref())?;

    let q_slopes = slope_cols.len();
    let mut coefficients = vec![0.0; q_total];
    for (k, &j) in slope_cols.iter().enumerate() {
        coefficients[j] = fit.coefficients[k];
    }

    let mut covariance = DMatrix::zeros(q_total, q_total);
    for (a, &ja) in slope_cols.iter().enumerate() {
        for (c, &jc) in slope_cols.iter().enumerate() {
            covariance[(ja, jc)] = fit.covariance[(a, c)];
        }
    }

    if let Some((cidx, cval)) = constant {
        coefficients[cidx] = fit.intercept / cval;

        let tau_s = rank::tau_s_estimate(&fit.residuals, q_slopes);
        let ubar = rank::column_means(&u);
        let v_ubar = &fit.covariance * &ubar;
        let var_loc = tau_s * tau_s / n as f64 + ubar.dot(&v_ubar);
        covariance[(cidx, cidx)] = var_loc / (cval * cval);
        for (k, &j) in slope_cols.iter().enumerate() {
            covariance[(cidx, j)] = -v_ubar[k] / cval;
            covariance[(j, cidx)] = -v_ubar[k] / cval;
        }
    }

    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            y[i] - (0..q_total)
                .map(|j| design[(i, j)] * coefficients[j])
                .sum::<f64>()
        })
        .collect();

    Ok(DesignFit {
        coefficients,
        covariance,
        scale: fit.c_phi_hat,
        objective: fit.dispersion_value,
        residuals,
    })
}

/// Ordinary least-squares fit of a full design, with covariance
/// `sigma^2 (D'D)^{-1}` and `sigma^2 = RSS / (n - q)`.
pub(crate) fn ols_fit_design(y: &[f64], design: &DMatrix<f64>) -> Result<DesignFit> {
    let n = y.len();
    let q = design.ncols();
    if n <= q {
        return Err(Error::TooFewObservations {
            needed: q + 1,
            got: n,
        });
    }
    // reject exactly-degenerate columns up front for a clear error
    for j in 0..q {
        let col = design.column(j);
        if col.iter().all(|&v| v == 0.0) {
            return Err(Error::ConstantColumn { index: j });
        }
    }
    let coef = rank::ols_solve(y, design)?;

    let residuals: Vec<f64> = (0..n)
        .map(|i| y[i] - (0..q).map(|j| design[(i, j)] * coef[j]).sum::<f64>())
        .collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let sigma2 = rss / (n - q) as f64;

    let gram = design.transpose() * design;
    let covariance = match gram.clone().cholesky() {
        Some(chol) => chol.inverse() * sigma2,
        None => {
            // near-singular design: fall back to a pseudo-inverse
            let svd = gram.svd(true, true);
            let max_sv = svd.singular_values.iter().cloned().fold(0f64, f64::max);
            let mut pinv = svd
                .pseudo_inverse(max_sv * 1e-13)
                .map_err(|_| Error::SingularMatrix {
                    context: "least-squares design gram matrix",
                })?;
            pinv *= sigma2;
            pinv
        }
    };

    Ok(DesignFit {
        coefficients: coef.iter().cloned().collect(),
        covariance,
        scale: sigma2.sqrt(),
        objective: rss,
        residuals,
    })
}
