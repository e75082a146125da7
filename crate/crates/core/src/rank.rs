//! Rank-based linear regression without a changepoint.
//!
//! The estimator minimizes the score dispersion
//! `D(b) = sum_i phi(R_i / (n+1)) e_i`, where `R_i` is the rank of the
//! residual `e_i = y_i - w_i' b` and `phi` is a centered, square-integrable
//! score on (0, 1). With Wilcoxon scores `phi(t) = sqrt(12)(t - 1/2)` the
//! dispersion equals `sqrt(12) / (2(n+1)) * sum_{i<j} |e_i - e_j|`, a convex
//! pairwise-difference L1 objective, which is what the solver exploits.
//!
//! The dispersion is invariant to adding a constant to the residuals, so a
//! location parameter cannot be identified from it: the intercept is
//! estimated separately as the median of the final residuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde;
use crate::stats;

const IRLS_EPS: f64 = 1e-8;
const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 200;

/// Score function on (0, 1), centered and scaled to unit squared integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ScoreFunction {
    /// `phi(t) = sqrt(12) (t - 1/2)`
    #[default]
    Wilcoxon,
    /// `phi(t) = sgn(t - 1/2)`
    Sign,
}

impl ScoreFunction {
    pub fn evaluate(self, t: f64) -> f64 {
        match self {
            ScoreFunction::Wilcoxon => 12f64.sqrt() * (t - 0.5),
            ScoreFunction::Sign => {
                if t > 0.5 {
                    1.0
                } else if t < 0.5 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// A fitted rank-based linear model.
#[derive(Debug, Clone)]
pub struct RankLinearFit {
    /// Slope coefficients for the columns of `w`.
    pub coefficients: Vec<f64>,
    /// Location estimate: median of the final residuals.
    pub intercept: f64,
    /// Residuals `y - w b` using the slope coefficients only, so that rank
    /// statistics computed from them are translation invariant.
    pub residuals: Vec<f64>,
    /// Asymptotic covariance of the slopes, `c_phi^2 (w_c' w_c)^{-1}` with
    /// `w_c` the column-centered design.
    pub covariance: DMatrix<f64>,
    /// Estimated scale parameter of the score function.
    pub c_phi_hat: f64,
    /// Dispersion of the returned residuals.
    pub dispersion_value: f64,
}

/// Midranks of `values` (ties receive the average of their positions).
/// Ranks are 1-based and sum to `n (n + 1) / 2`.
pub fn ranks(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n == 0 {
        return Err(Error::TooFewObservations { needed: 1, got: 0 });
    }
    for (index, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "rank input",
                index,
            });
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());

    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end+1, averaged
        let midrank = (start + end + 2) as f64 / 2.0;
        for &idx in &order[start..=end] {
            out[idx] = midrank;
        }
        start = end + 1;
    }
    Ok(out)
}

/// Score dispersion of a residual vector: `sum_i phi(R_i/(n+1)) e_i`.
pub fn dispersion(residuals: &[f64], score: ScoreFunction) -> Result<f64> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n });
    }
    let r = ranks(residuals)?;
    let denom = (n + 1) as f64;
    Ok(residuals
        .iter()
        .zip(&r)
        .map(|(e, rank)| score.evaluate(rank / denom) * e)
        .sum())
}

/// Fit a rank-based linear regression of `y` on the columns of `w`.
///
/// `w` must have full column rank and no constant column; the intercept is
/// estimated separately. The Wilcoxon objective is minimized by iteratively
/// reweighted least squares on the pairwise-difference representation,
/// warm-started from the ordinary least-squares fit.
pub fn fit_rank_linear(y: &[f64], w: &DMatrix<f64>, score: ScoreFunction) -> Result<RankLinearFit> {
    fit_rank_linear_with_init(y, w, score, None)
}

/// Same as [`fit_rank_linear`], but with an optional warm start for the slope
/// coefficients (used by the iterative bent-line fit).
pub(crate) fn fit_rank_linear_with_init(
    y: &[f64],
    w: &DMatrix<f64>,
    score: ScoreFunction,
    init: Option<&[f64]>,
) -> Result<RankLinearFit> {
    let n = y.len();
    let q = w.ncols();
    if w.nrows() != n {
        return Err(Error::LengthMismatch {
            what: "design rows",
            expected: n,
            got: w.nrows(),
        });
    }
    if q == 0 {
        return Err(Error::InvalidConfig("design has no columns".into()));
    }
    if q >= n {
        return Err(Error::TooFewObservations {
            needed: q + 1,
            got: n,
        });
    }
    for j in 0..q {
        let col = w.column(j);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in col.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo == 0.0 {
            return Err(Error::ConstantColumn { index: j });
        }
    }

    let coefficients = match score {
        ScoreFunction::Wilcoxon => irls_pairwise(y, w, init)?,
        ScoreFunction::Sign => irls_lad_slopes(y, w)?,
    };

    let residuals: Vec<f64> = (0..n)
        .map(|i| y[i] - (0..q).map(|j| w[(i, j)] * coefficients[j]).sum::<f64>())
        .collect();
    let intercept = stats::median(&residuals);

    let c_phi_hat = c_phi_lenient(&residuals, score);
    let covariance = slope_covariance(w, c_phi_hat)?;
    let dispersion_value = dispersion(&residuals, score)?;

    Ok(RankLinearFit {
        coefficients,
        intercept,
        residuals,
        covariance,
        c_phi_hat,
        dispersion_value,
    })
}

/// Plug-in estimate of the scale parameter `c_phi = 1 / int phi'(F(u)) f(u) dF(u)`.
///
/// For Wilcoxon scores this is `1 / (sqrt(12) int f^2)`, estimated through a
/// Gaussian-kernel density with the supplied bandwidth; for sign scores it is
/// `1 / (2 f(median))`.
pub fn estimate_c_phi(residuals: &[f64], score: ScoreFunction, bandwidth: f64) -> Result<f64> {
    let n = residuals.len();
    if n < 10 {
        return Err(Error::TooFewObservations { needed: 10, got: n });
    }
    if bandwidth <= 0.0 {
        return Err(Error::InvalidConfig("bandwidth must be positive".into()));
    }
    let spread = residuals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - residuals.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread == 0.0 {
        return Err(Error::DegenerateResiduals);
    }
    Ok(c_phi_with_bandwidth(residuals, score, bandwidth))
}

/// Scale estimate with the default rule-of-thumb bandwidth `1.06 sd n^{-1/5}`.
pub fn estimate_c_phi_default(residuals: &[f64], score: ScoreFunction) -> Result<f64> {
    let h = kde::rule_of_thumb_bandwidth(residuals, 1.06);
    estimate_c_phi(residuals, score, h)
}

fn c_phi_with_bandwidth(residuals: &[f64], score: ScoreFunction, h: f64) -> f64 {
    match score {
        ScoreFunction::Wilcoxon => {
            let integral = kde::squared_density_integral_gaussian(residuals, h);
            1.0 / (12f64.sqrt() * integral)
        }
        ScoreFunction::Sign => {
            let med = stats::median(residuals);
            let f_med = kde::density_at(&[med], residuals, h, kde::Kernel::Gaussian)[0];
            1.0 / (2.0 * f_med)
        }
    }
}

/// Scale estimate for internal use: returns 0 when residuals are too few or
/// numerically degenerate (a noiseless fit), instead of erroring.
pub(crate) fn c_phi_lenient(residuals: &[f64], score: ScoreFunction) -> f64 {
    let sd = stats::sample_sd(residuals).unwrap_or(0.0);
    let level = residuals.iter().fold(0f64, |acc, e| acc.max(e.abs()));
    if residuals.len() < 4 || sd <= 1e-12 * level.max(1.0) {
        return 0.0;
    }
    let h = kde::rule_of_thumb_bandwidth(residuals, 1.06);
    c_phi_with_bandwidth(residuals, score, h)
}

/// Confidence-interval-of-the-median estimate of the location scale
/// parameter `1 / (2 f(median))`, with a degrees-of-freedom correction.
/// Used for the variance of the separately estimated intercept.
pub(crate) fn tau_s_estimate(residuals: &[f64], n_slopes: usize) -> f64 {
    let n = residuals.len();
    if n < 4 || n <= n_slopes + 1 {
        return 0.0;
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let zc = stats::normal_quantile(0.975);
    let c1 = n as f64 / 2.0 - (n as f64).sqrt() * zc / 2.0 - 0.5;
    let ic1 = (c1.floor().max(0.0)) as usize;
    let lower = sorted[ic1.min(n - 1)];
    let upper = sorted[n - 1 - ic1.min(n - 1)];
    let df = (n as f64 / (n - n_slopes - 1) as f64).sqrt();
    df * (n as f64).sqrt() * (upper - lower) / (2.0 * zc)
}

fn slope_covariance(w: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    let q = w.ncols();
    if scale == 0.0 {
        return Ok(DMatrix::zeros(q, q));
    }
    let centered = center_columns(w);
    let gram = centered.transpose() * &centered;
    let chol = gram
        .cholesky()
        .ok_or(Error::SingularMatrix {
            context: "centered design gram matrix",
        })?;
    let mut inv = chol.inverse();
    inv *= scale * scale;
    // symmetrize against rounding
    let inv_t = inv.transpose();
    Ok((inv + inv_t) * 0.5)
}

pub(crate) fn center_columns(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut out = w.clone();
    for j in 0..w.ncols() {
        let mean = w.column(j).iter().sum::<f64>() / n as f64;
        for i in 0..n {
            out[(i, j)] -= mean;
        }
    }
    out
}

pub(crate) fn column_means(w: &DMatrix<f64>) -> DVector<f64> {
    let n = w.nrows() as f64;
    DVector::from_iterator(
        w.ncols(),
        (0..w.ncols()).map(|j| w.column(j).iter().sum::<f64>() / n),
    )
}

/// Ordinary least-squares solve of `y` on `design` (used as warm start and by
/// the least-squares baseline). Returns the coefficient vector.
pub(crate) fn ols_solve(y: &[f64], design: &DMatrix<f64>) -> Result<DVector<f64>> {
    let rhs = DVector::from_column_slice(y);
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0f64, f64::max);
    if max_sv == 0.0 {
        return Err(Error::RankDeficient);
    }
    svd.solve(&rhs, max_sv * 1e-13)
        .map_err(|_| Error::RankDeficient)
}

/// IRLS for the Wilcoxon dispersion via its pairwise-difference form:
/// minimize `sum_{i<j} |dy_ij - dw_ij . b|` with smoothed weights
/// `1 / max(|r_ij|, eps)`.
///
/// The weight floor makes the iteration crawl near the minimizer, so three
/// refinements keep it fast and sharp: the floor shrinks in stages down to
/// the target eps, the loop stops once the true dispersion stalls, and the
/// final iterate is polished onto the exact solution vertex (an L1 minimizer
/// interpolates q pairwise differences). A hard error is reserved for
/// genuine divergence.
fn irls_pairwise(y: &[f64], w: &DMatrix<f64>, init: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = y.len();
    let q = w.ncols();

    let mut b: Vec<f64> = match init {
        Some(v) if v.len() == q && v.iter().all(|x| x.is_finite()) => v.to_vec(),
        _ => {
            // warm start: least squares with an intercept column, slopes only
            let mut init_design = DMatrix::zeros(n, q + 1);
            for i in 0..n {
                init_design[(i, 0)] = 1.0;
                for j in 0..q {
                    init_design[(i, j + 1)] = w[(i, j)];
                }
            }
            let warm = ols_solve(y, &init_design)?;
            (0..q).map(|j| warm[j + 1]).collect()
        }
    };

    let pairs = PairDiffs::new(y, w);

    let objective = |b: &[f64]| -> f64 {
        let residuals: Vec<f64> = (0..n)
            .map(|i| y[i] - (0..q).map(|j| w[(i, j)] * b[j]).sum::<f64>())
            .collect();
        dispersion(&residuals, ScoreFunction::Wilcoxon).unwrap_or(f64::INFINITY)
    };

    let mut best_b = b.clone();
    let mut best_obj = objective(&b);
    let mut last_change = f64::INFINITY;
    let mut iterations_left = IRLS_MAX_ITER as i64;

    // the smoothing floor shrinks per stage; each stage only roughs in the
    // solution for the exact polish below, so improvements smaller than
    // 1e-9 relative count as a stall
    for (floor, stage_tol, stage_cap) in [
        (1e-4, 1e-6, 25i64),
        (1e-6, 1e-7, 15),
        (IRLS_EPS, IRLS_TOL, 10),
    ] {
        let mut stall = 0;
        let mut stage_left = stage_cap.min(iterations_left);
        while stage_left > 0 {
            stage_left -= 1;
            iterations_left -= 1;
            let solution = pairs.weighted_step(&b, floor)?;
            last_change = (0..q)
                .map(|j| (solution[j] - b[j]).abs())
                .fold(0.0, f64::max);
            b.copy_from_slice(&solution);

            let obj = objective(&b);
            if obj < best_obj - 1e-9 * (1.0 + best_obj.abs()) {
                best_obj = obj;
                best_b.copy_from_slice(&b);
                stall = 0;
            } else {
                if obj < best_obj {
                    best_obj = obj;
                    best_b.copy_from_slice(&b);
                }
                stall += 1;
            }

            let scale = 1.0 + b.iter().fold(0f64, |acc, v| acc.max(v.abs()));
            if last_change < stage_tol * scale || stall >= 3 {
                break;
            }
        }
        b.copy_from_slice(&best_b);
        if iterations_left <= 0 {
            break;
        }
    }

    // polish: exact line searches along coordinates and along directions that
    // preserve the active residual ties, then drive the point to a certified
    // subgradient optimum, enumerating candidate solution vertices among the
    // tightest pairs when the certificate direction stops helping
    pairs.descend(&mut best_b, &objective);
    best_obj = objective(&best_b);
    let mut ratios: Vec<(f64, f64)> = Vec::new();
    for _attempt in 0..8 {
        match pairs.optimality_direction(&best_b) {
            None => break, // certified optimal within tolerance
            Some(direction) => {
                let t = pairs.line_search(&best_b, &direction, &mut ratios);
                let candidate: Vec<f64> = best_b
                    .iter()
                    .zip(&direction)
                    .map(|(bb, vv)| bb + t * vv)
                    .collect();
                let obj = objective(&candidate);
                if t != 0.0 && obj < best_obj - 1e-15 * (1.0 + best_obj.abs()) {
                    best_b.copy_from_slice(&candidate);
                    pairs.descend(&mut best_b, &objective);
                    best_obj = objective(&best_b);
                    continue;
                }
                // certificate direction did not improve: fall back to vertex
                // enumeration, and stop once that finds nothing either
                if let Some((candidate, _)) = pairs.best_vertex(&best_b, best_obj, &objective) {
                    best_b.copy_from_slice(&candidate);
                    pairs.descend(&mut best_b, &objective);
                    best_obj = objective(&best_b);
                } else {
                    break;
                }
            }
        }
    }

    let scale = 1.0 + best_b.iter().fold(0f64, |acc, v| acc.max(v.abs()));
    if last_change > 1e-3 * scale {
        return Err(Error::DidNotConverge {
            iterations: IRLS_MAX_ITER,
            last_change,
        });
    }
    Ok(best_b)
}

/// Pairwise differences of the regression data, cached when small enough.
struct PairDiffs<'a> {
    y: &'a [f64],
    w: &'a DMatrix<f64>,
    n: usize,
    q: usize,
    dy: Vec<f64>,
    dw: Vec<f64>,
    cached: bool,
}

impl<'a> PairDiffs<'a> {
    fn new(y: &'a [f64], w: &'a DMatrix<f64>) -> Self {
        let n = y.len();
        let q = w.ncols();
        let n_pairs = n * (n - 1) / 2;
        let cached = n <= 2048;
        let mut dy = Vec::new();
        let mut dw = Vec::new();
        if cached {
            dy.reserve_exact(n_pairs);
            dw.reserve_exact(n_pairs * q);
            for i in 0..n {
                for j in (i + 1)..n {
                    dy.push(y[i] - y[j]);
                    for a in 0..q {
                        dw.push(w[(i, a)] - w[(j, a)]);
                    }
                }
            }
        }
        PairDiffs {
            y,
            w,
            n,
            q,
            dy,
            dw,
            cached,
        }
    }

    fn for_each_pair(&self, b: &[f64], mut visit: impl FnMut(f64, &[f64])) {
        let q = self.q;
        if self.cached {
            let n_pairs = self.dy.len();
            for k in 0..n_pairs {
                let row = &self.dw[k * q..(k + 1) * q];
                let mut r = self.dy[k];
                for a in 0..q {
                    r -= row[a] * b[a];
                }
                visit(r, row);
            }
        } else {
            let n = self.n;
            let mut fitted = vec![0.0; n];
            for i in 0..n {
                fitted[i] = (0..q).map(|j| self.w[(i, j)] * b[j]).sum();
            }
            let mut row = vec![0.0; q];
            for i in 0..n {
                let ei = self.y[i] - fitted[i];
                for j in (i + 1)..n {
                    let r = ei - (self.y[j] - fitted[j]);
                    for a in 0..q {
                        row[a] = self.w[(i, a)] - self.w[(j, a)];
                    }
                    visit(r, &row);
                }
            }
        }
    }

    /// One weighted least-squares step of the smoothed L1 problem.
    fn weighted_step(&self, b: &[f64], floor: f64) -> Result<Vec<f64>> {
        let q = self.q;
        let mut gram = vec![0.0; q * q];
        let mut rhs = vec![0.0; q];
        self.for_each_pair(b, |r, row| {
            let wgt = 1.0 / r.abs().max(floor);
            // the difference target equals r + row . b
            let target = r + row.iter().zip(b).map(|(d, bb)| d * bb).sum::<f64>();
            for a in 0..q {
                let wa = wgt * row[a];
                rhs[a] += wa * target;
                for c in a..q {
                    gram[a * q + c] += wa * row[c];
                }
            }
        });
        let mut a_mat = DMatrix::zeros(q, q);
        for a in 0..q {
            for c in a..q {
                a_mat[(a, c)] = gram[a * q + c];
                a_mat[(c, a)] = gram[a * q + c];
            }
        }
        let rhs_v = DVector::from_column_slice(&rhs);
        let solution = a_mat
            .cholesky()
            .ok_or(Error::RankDeficient)?
            .solve(&rhs_v);
        Ok(solution.iter().cloned().collect())
    }

    /// Exact minimizer along direction `v`: the objective is
    /// `sum_k |r_k - t d_k|` with `d_k = row_k . v`, minimized at the
    /// weighted median of the ratios `r_k / d_k` with weights `|d_k|`.
    fn line_search(&self, b: &[f64], v: &[f64], ratios: &mut Vec<(f64, f64)>) -> f64 {
        ratios.clear();
        self.for_each_pair(b, |r, row| {
            let d: f64 = row.iter().zip(v).map(|(a, c)| a * c).sum();
            if d != 0.0 {
                ratios.push((r / d, d.abs()));
            }
        });
        if ratios.is_empty() {
            return 0.0;
        }
        let total: f64 = ratios.iter().map(|(_, w)| w).sum();
        weighted_lower_median(ratios, total / 2.0)
    }

    /// Singular directions of the rows whose residual difference is tied at
    /// (numerical) zero. The small-singular-value directions are the valley
    /// along which near-parallel ties slide; the exact null directions keep
    /// the ties intact. All of them are worth a line search.
    fn tie_directions(&self, b: &[f64]) -> Vec<Vec<f64>> {
        let q = self.q;
        let mut active_rows: Vec<Vec<f64>> = Vec::new();
        let mut level = 0.0f64;
        self.for_each_pair(b, |r, _| level = level.max(r.abs()));
        let theta = 1e-9 * (1.0 + level);
        self.for_each_pair(b, |r, row| {
            if r.abs() <= theta && active_rows.len() < 4 * q {
                active_rows.push(row.to_vec());
            }
        });
        if active_rows.is_empty() {
            return Vec::new();
        }
        let m = DMatrix::from_fn(active_rows.len(), q, |i, j| active_rows[i][j]);
        let svd = (m.transpose() * &m).svd(true, false);
        let u = match &svd.u {
            Some(u) => u.clone(),
            None => return Vec::new(),
        };
        (0..q).map(|j| (0..q).map(|i| u[(i, j)]).collect()).collect()
    }

    /// Exact descent over coordinate directions and tie-preserving
    /// directions until no line search improves the true objective.
    fn descend(&self, b: &mut [f64], objective: &impl Fn(&[f64]) -> f64) {
        let q = self.q;
        let mut current = objective(b);
        let mut ratios: Vec<(f64, f64)> = Vec::with_capacity(self.n * (self.n - 1) / 2);
        for _round in 0..(2 * q + 6) {
            let mut improved = false;

            let mut directions: Vec<Vec<f64>> = Vec::new();
            for coord in 0..q {
                let mut v = vec![0.0; q];
                v[coord] = 1.0;
                directions.push(v);
            }
            directions.extend(self.tie_directions(b));

            for v in &directions {
                let t = self.line_search(b, v, &mut ratios);
                if t == 0.0 {
                    continue;
                }
                let candidate: Vec<f64> =
                    b.iter().zip(v).map(|(bb, vv)| bb + t * vv).collect();
                let obj = objective(&candidate);
                if obj < current - 1e-15 * (1.0 + current.abs()) {
                    b.copy_from_slice(&candidate);
                    current = obj;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
    }

    /// Subgradient optimality check. The objective `sum_k |r_k(b)|` is
    /// minimal iff the gradient contribution of the non-tied pairs,
    /// `s = sum_{|r_k| > 0} sign(r_k) row_k`, lies in the zonotope
    /// `{sum_{ties} c_k row_k : c_k in [-1, 1]}`. Feasibility is decided by a
    /// tiny box-constrained least squares; when infeasible the unmatched
    /// component of `s` points at a descent direction, which is returned.
    fn optimality_direction(&self, b: &[f64]) -> Option<Vec<f64>> {
        let q = self.q;
        let mut level = 0.0f64;
        self.for_each_pair(b, |r, _| level = level.max(r.abs()));
        let theta = 1e-9 * (1.0 + level);

        let mut s = vec![0.0; q];
        let mut tie_rows: Vec<Vec<f64>> = Vec::new();
        let cap = 8 * q;
        self.for_each_pair(b, |r, row| {
            if r.abs() > theta {
                let sign = if r > 0.0 { 1.0 } else { -1.0 };
                for a in 0..q {
                    s[a] += sign * row[a];
                }
            } else if tie_rows.len() < cap {
                tie_rows.push(row.to_vec());
            }
        });

        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let kappa_tol = 5e-6 * 2.0 * (self.n + 1) as f64 / 12f64.sqrt();
        if tie_rows.is_empty() {
            // differentiable point: optimal if the gradient is negligible
            if s_norm <= 1e-9f64.max(kappa_tol) {
                return None;
            }
            return Some(s.iter().map(|v| v / s_norm).collect());
        }

        // projected gradient on min ||M c - s||^2, c in [-1, 1]^m
        let m = tie_rows.len();
        let mut c = vec![0.0; m];
        let trace: f64 = tie_rows
            .iter()
            .map(|row| row.iter().map(|v| v * v).sum::<f64>())
            .sum();
        let step = 1.0 / trace.max(1e-300);
        let mut residual = vec![0.0; q];
        for _iter in 0..400 {
            for a in 0..q {
                residual[a] = -s[a];
                for (k, row) in tie_rows.iter().enumerate() {
                    residual[a] += c[k] * row[a];
                }
            }
            let mut moved = 0.0f64;
            for (k, row) in tie_rows.iter().enumerate() {
                let grad: f64 = row.iter().zip(&residual).map(|(a, r)| a * r).sum();
                let updated = (c[k] - step * grad).clamp(-1.0, 1.0);
                moved = moved.max((updated - c[k]).abs());
                c[k] = updated;
            }
            if moved < 1e-12 {
                break;
            }
        }
        for a in 0..q {
            residual[a] = -s[a];
            for (k, row) in tie_rows.iter().enumerate() {
                residual[a] += c[k] * row[a];
            }
        }
        let gap = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
        // A gap g admits at most g * 1e-3 pairwise-objective improvement at
        // perturbation radius 1e-3; in dispersion units that is
        // kappa * g * 1e-3 with kappa = sqrt(12) / (2 (n + 1)). Accepting
        // g <= 5e-6 / kappa therefore leaves any 1e-3-ball improvement below
        // 5e-9, well under the optimality guarantee this solver targets.
        let kappa = 12f64.sqrt() / (2.0 * (self.n + 1) as f64);
        if gap <= (1e-9 * (1.0 + s_norm)).max(5e-6 / kappa) {
            return None;
        }
        // residual = M c - s; descend along s - M c
        Some(residual.iter().map(|v| -v / gap).collect())
    }

    /// Enumerate interpolation vertices over the pool of pairs with the
    /// smallest absolute residual difference (candidate active sets of the L1
    /// minimizer) and return the best strictly-improving one.
    fn best_vertex(
        &self,
        b: &[f64],
        current_obj: f64,
        objective: &impl Fn(&[f64]) -> f64,
    ) -> Option<(Vec<f64>, f64)> {
        let q = self.q;
        let n_pairs = self.n * (self.n - 1) / 2;
        // wider pools where enumeration stays cheap
        let pool_size = match q {
            1 => 96,
            2 => 72,
            3 => 31,
            4 => 20,
            5 => 16,
            _ => 4 * q + 4,
        }
        .min(n_pairs);

        // pool of smallest |r| pairs with their rows and targets dy
        let mut entries: Vec<(f64, Vec<f64>, f64)> = Vec::new();
        self.for_each_pair(b, |r, row| {
            let target = r + row.iter().zip(b).map(|(d, bb)| d * bb).sum::<f64>();
            let key = r.abs();
            if entries.len() < pool_size {
                entries.push((key, row.to_vec(), target));
                entries.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
            } else if key < entries[pool_size - 1].0 {
                entries[pool_size - 1] = (key, row.to_vec(), target);
                let mut idx = pool_size - 1;
                while idx > 0 && entries[idx].0 < entries[idx - 1].0 {
                    entries.swap(idx, idx - 1);
                    idx -= 1;
                }
            }
        });
        let pool = entries.len();
        if pool < q {
            return None;
        }

        // solve every combination's vertex (cheap) and keep candidates
        // ordered by distance from the current point; only the nearest ones
        // get a full objective evaluation
        let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
        let mut combo: Vec<usize> = (0..q).collect();
        let mut budget = 50_000usize;
        'enumerate: loop {
            if budget == 0 {
                break;
            }
            budget -= 1;

            let mut rows = DMatrix::zeros(q, q);
            let mut targets = DVector::zeros(q);
            for (slot, &k) in combo.iter().enumerate() {
                for a in 0..q {
                    rows[(slot, a)] = entries[k].1[a];
                }
                targets[slot] = entries[k].2;
            }
            if let Some(candidate) = rows.lu().solve(&targets) {
                if candidate.iter().all(|v| v.is_finite()) {
                    let distance = candidate
                        .iter()
                        .zip(b)
                        .map(|(c, bb)| (c - bb) * (c - bb))
                        .sum::<f64>()
                        .sqrt();
                    candidates.push((distance, candidate.iter().cloned().collect()));
                }
            }

            // next combination of q indices out of pool
            let mut slot = q;
            loop {
                if slot == 0 {
                    break 'enumerate;
                }
                slot -= 1;
                if combo[slot] != slot + pool - q {
                    combo[slot] += 1;
                    for later in (slot + 1)..q {
                        combo[later] = combo[later - 1] + 1;
                    }
                    break;
                }
            }
        }

        candidates.sort_by(|a, c| a.0.partial_cmp(&c.0).unwrap());
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut best_obj = current_obj;
        for (_, cand) in candidates.into_iter().take(300) {
            let obj = objective(&cand);
            if obj < best_obj - 1e-15 * (1.0 + best_obj.abs()) {
                best_obj = obj;
                best = Some((cand, obj));
            }
        }
        best
    }
}

/// IRLS for the sign-score objective: least absolute deviations with an
/// internal intercept column; the location estimate is discarded and the
/// intercept is re-estimated as the residual median by the caller.
fn irls_lad_slopes(y: &[f64], w: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = y.len();
    let q = w.ncols();
    let mut design = DMatrix::zeros(n, q + 1);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for j in 0..q {
            design[(i, j + 1)] = w[(i, j)];
        }
    }
    let mut b = ols_solve(y, &design)?;
    let mut last_change = f64::INFINITY;

    for _iter in 0..IRLS_MAX_ITER {
        let fitted = &design * &b;
        let mut gram = DMatrix::zeros(q + 1, q + 1);
        let mut rhs = DVector::zeros(q + 1);
        for i in 0..n {
            let r: f64 = y[i] - fitted[i];
            let wgt = 1.0 / r.abs().max(IRLS_EPS);
            for a in 0..=q {
                rhs[a] += wgt * design[(i, a)] * y[i];
                for c in a..=q {
                    gram[(a, c)] += wgt * design[(i, a)] * design[(i, c)];
                }
            }
        }
        for a in 0..=q {
            for c in (a + 1)..=q {
                gram[(c, a)] = gram[(a, c)];
            }
        }
        let solution = gram
            .cholesky()
            .ok_or(Error::RankDeficient)?
            .solve(&rhs);
        last_change = (0..=q)
            .map(|j| {
                let d: f64 = solution[j] - b[j];
                d.abs()
            })
            .fold(0.0f64, f64::max);
        b = solution;
        let scale = 1.0 + b.iter().fold(0f64, |acc, v| acc.max(v.abs()));
        if last_change < IRLS_TOL * scale {
            return Ok((1..=q).map(|j| b[j]).collect());
        }
    }

    let scale = 1.0 + b.iter().fold(0f64, |acc, v| acc.max(v.abs()));
    if last_change > 1e-6 * scale {
        return Err(Error::DidNotConverge {
            iterations: IRLS_MAX_ITER,
            last_change,
        });
    }
    Ok((1..=q).map(|j| b[j]).collect())
}

/// Smallest value whose cumulative weight (in value order) reaches `target`,
/// by expected-linear-time three-way partitioning.
fn weighted_lower_median(items: &mut [(f64, f64)], mut target: f64) -> f64 {
    let mut start = 0usize;
    let mut end = items.len();
    loop {
        let len = end - start;
        if len == 0 {
            return 0.0;
        }
        if len == 1 {
            return items[start].0;
        }
        let pivot = {
            let a = items[start].0;
            let b = items[start + len / 2].0;
            let c = items[end - 1].0;
            // median of three
            a.max(b).min(c.max(a.min(b)))
        };
        let mut lt = start;
        let mut i = start;
        let mut gt = end;
        while i < gt {
            let x = items[i].0;
            if x < pivot {
                items.swap(lt, i);
                lt += 1;
                i += 1;
            } else if x > pivot {
                gt -= 1;
                items.swap(i, gt);
            } else {
                i += 1;
            }
        }
        let weight_lt: f64 = items[start..lt].iter().map(|v| v.1).sum();
        if target <= weight_lt && lt > start {
            end = lt;
            continue;
        }
        let weight_eq: f64 = items[lt..gt].iter().map(|v| v.1).sum();
        if target <= weight_lt + weight_eq || gt == end {
            return pivot;
        }
        target -= weight_lt + weight_eq;
        start = gt;
    }
}
