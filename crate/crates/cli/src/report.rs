//! Report assembly and file emission. JSON reports are deterministic for a
//! fixed seed and configuration except for the timestamp, which is confined
//! to the `meta` block.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use bentrank_core::{BentLineFit, CusumTestResult};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    /// Seconds since the Unix epoch at report time; the only
    /// non-deterministic field in any report.
    pub timestamp: u64,
    pub config: serde_json::Value,
}

pub fn meta(command: &str, seed: u64, config: serde_json::Value) -> Meta {
    Meta {
        tool: "bentrank",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        seed,
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config,
    }
}

/// One parameter row of a fit table.
#[derive(Debug, Clone, Serialize)]
pub struct ParamRow {
    pub parameter: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Serializable summary of one fitted model.
#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub method: String,
    pub parameters: Vec<ParamRow>,
    pub se_tau: f64,
    pub ci_level: f64,
    pub scale: f64,
    pub eta_final: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn fit_summary(method: &str, names: &[String], fit: &BentLineFit) -> FitSummary {
    let mut parameters = Vec::new();
    let theta = fit.theta();
    let ses = fit.theta_standard_errors();
    let cis = fit.theta_confidence_intervals();
    let p = fit.params.alpha.len();
    for i in 0..theta.len() {
        let parameter = if i < p {
            format!("alpha_{}[{}]", i, names.get(i).map(String::as_str).unwrap_or("x"))
        } else if i == p {
            "beta".to_string()
        } else {
            "gamma".to_string()
        };
        parameters.push(ParamRow {
            parameter,
            estimate: theta[i],
            se: ses[i],
            ci_lower: cis[i].0,
            ci_upper: cis[i].1,
        });
    }
    parameters.push(ParamRow {
        parameter: "tau".to_string(),
        estimate: fit.params.tau,
        se: fit.se_tau,
        ci_lower: fit.ci_tau.0,
        ci_upper: fit.ci_tau.1,
    });
    FitSummary {
        method: method.to_string(),
        parameters,
        se_tau: fit.se_tau,
        ci_level: fit.ci_level,
        scale: fit.scale_c_phi,
        eta_final: fit.eta_final,
        iterations: fit.iterations,
        converged: fit.converged,
    }
}

/// Parameter table CSV: one row per parameter with estimate, standard error
/// and confidence bounds. Floating-point values use the shortest
/// representation that round-trips exactly.
pub fn param_table_csv(summary: &FitSummary) -> String {
    let mut out = String::from("parameter,estimate,se,ci_lower,ci_upper\n");
    for row in &summary.parameters {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.parameter, row.estimate, row.se, row.ci_lower, row.ci_upper
        ));
    }
    out
}

/// Fitted-curve CSV over a z grid. The linear covariates are held at the
/// recorded values (`x_*` columns) so the file is reproducible from the
/// parameter table alone.
pub fn curve_csv(
    zs: &[f64],
    predictions: &[f64],
    x_row: &[f64],
    covariate_names: &[String],
) -> String {
    let mut header = String::from("z,y_hat");
    for (j, name) in covariate_names.iter().enumerate() {
        header.push_str(&format!(",x_{j}[{name}]"));
    }
    header.push('\n');
    let mut out = header;
    for (z, pred) in zs.iter().zip(predictions) {
        out.push_str(&format!("{z},{pred}"));
        for v in x_row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Serializable summary of one changepoint existence test.
#[derive(Debug, Clone, Serialize)]
pub struct TestSummary {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    pub nb: usize,
    pub bandwidth: f64,
    pub seed: u64,
    pub tau_grid: Vec<f64>,
    pub process_path: Vec<f64>,
    pub bootstrap_stats: Vec<f64>,
}

pub fn test_summary(method: &str, result: &CusumTestResult) -> TestSummary {
    TestSummary {
        method: method.to_string(),
        statistic: result.statistic,
        p_value: result.p_value,
        nb: result.num_bootstrap(),
        bandwidth: result.bandwidth,
        seed: result.seed,
        tau_grid: result.tau_grid.clone(),
        process_path: result.process_path.clone(),
        bootstrap_stats: result.bootstrap_stats.clone(),
    }
}

pub fn test_table_csv(summary: &TestSummary) -> String {
    format!(
        "method,statistic,p_value,nb,bandwidth,seed\n{},{},{},{},{},{}\n",
        summary.method,
        summary.statistic,
        summary.p_value,
        summary.nb,
        summary.bandwidth,
        summary.seed
    )
}

pub fn test_path_csv(summary: &TestSummary) -> String {
    let mut out = String::from("tau,r_n\n");
    for (tau, r) in summary.tau_grid.iter().zip(&summary.process_path) {
        out.push_str(&format!("{tau},{r}\n"));
    }
    out
}

pub fn test_bootstrap_csv(summary: &TestSummary) -> String {
    let mut out = String::from("replicate,t_star\n");
    for (idx, stat) in summary.bootstrap_stats.iter().enumerate() {
        out.push_str(&format!("{idx},{stat}\n"));
    }
    out
}

/// Cross-validation CSV: per-fold rows then a total row per method.
pub fn cv_csv(rows: &[(String, Vec<f64>, f64)]) -> String {
    let mut out = String::from("method,fold,pe\n");
    for (method, per_fold, total) in rows {
        for (fold, pe) in per_fold.iter().enumerate() {
            out.push_str(&format!("{method},{fold},{pe}\n"));
        }
        out.push_str(&format!("{method},total,{total}\n"));
    }
    out
}

pub fn write_text(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, content).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value).context("JSON serialization failed")?;
    write_text(dir, name, &(text + "\n"))
}
