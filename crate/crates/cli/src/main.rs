//! `bentrank`: bent-line regression with an unknown changepoint from the
//! command line. Subcommands: `fit`, `test`, `cv`, `simulate`, `sweep`.

mod ingest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use bentrank_core::sim::{self, SweepOptions, TestStudyOptions};
use bentrank_core::{
    bent, cusum, ls, BentLineFit, Dataset, ErrorKind, FitConfig, Kernel, TauInit, TestConfig,
};
use ingest::{ingest_csv, ColumnMapping, Ingested};

#[derive(Parser)]
#[command(
    name = "bentrank",
    version,
    about = "Robust bent line regression with changepoint estimation and testing"
)]
struct Cli {
    /// Worker threads for fitting, bootstrap and simulation loops
    /// (falls back to the BENTRANK_THREADS environment variable).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the bent-line model and write parameter and fitted-curve tables.
    Fit(FitArgs),
    /// Test for the existence of a changepoint via the wild bootstrap.
    Test(TestArgs),
    /// K-fold cross-validated prediction error.
    Cv(CvArgs),
    /// Monte Carlo study of estimation and of test size/power.
    Simulate(SimulateArgs),
    /// Type-I error of the test across a range of density bandwidths.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Input CSV file (header row required).
    #[arg(long)]
    input: PathBuf,
    /// Response column name.
    #[arg(long)]
    response: String,
    /// Threshold covariate column name.
    #[arg(long)]
    threshold: String,
    /// Comma-separated linear covariate column names.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Do not prepend an intercept column to the linear covariates.
    #[arg(long)]
    no_intercept: bool,
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Output formats.
    #[arg(long, value_delimiter = ',', default_values = ["csv", "json"])]
    format: Vec<Format>,
}

impl OutArgs {
    fn wants(&self, format: Format) -> bool {
        self.format.contains(&format)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Rank,
    Ls,
    Both,
}

impl MethodArg {
    fn includes_rank(self) -> bool {
        matches!(self, MethodArg::Rank | MethodArg::Both)
    }
    fn includes_ls(self) -> bool {
        matches!(self, MethodArg::Ls | MethodArg::Both)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum KernelArg {
    Epanechnikov,
    Gaussian,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Kernel {
        match k {
            KernelArg::Epanechnikov => Kernel::Epanechnikov,
            KernelArg::Gaussian => Kernel::Gaussian,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "both")]
    method: MethodArg,
    /// Confidence level for all intervals.
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    /// Initial changepoint: 'auto' or a number.
    #[arg(long, default_value = "auto")]
    tau_init: String,
    /// Also run the changepoint existence test first.
    #[arg(long)]
    test: bool,
    /// Bootstrap replicates for --test.
    #[arg(long, default_value_t = 1000)]
    nb: usize,
    /// Bandwidth multiplier for --test.
    #[arg(long, default_value_t = 1.06)]
    bandwidth_mult: f64,
    /// Density kernel for --test.
    #[arg(long, value_enum, default_value = "epanechnikov")]
    kernel: KernelArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Points in the fitted-curve grid.
    #[arg(long, default_value_t = 200)]
    curve_points: usize,
    #[command(flatten)]
    output: OutArgs,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "both")]
    method: MethodArg,
    #[arg(long, default_value_t = 1000)]
    nb: usize,
    #[arg(long, default_value_t = 1.06)]
    bandwidth_mult: f64,
    #[arg(long, value_enum, default_value = "epanechnikov")]
    kernel: KernelArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutArgs,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "both")]
    method: MethodArg,
    /// Number of folds.
    #[arg(long)]
    kfold: usize,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum StudyArg {
    Estimation,
    Test,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum CaseArg {
    Normal,
    T3,
    Contaminated,
}

impl From<CaseArg> for ErrorKind {
    fn from(c: CaseArg) -> ErrorKind {
        match c {
            CaseArg::Normal => ErrorKind::Normal,
            CaseArg::T3 => ErrorKind::T3,
            CaseArg::Contaminated => ErrorKind::contaminated(0.10),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Which study to run.
    #[arg(long, value_enum, default_value = "estimation")]
    study: StudyArg,
    /// Error cases to include.
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["normal", "t3", "contaminated"])]
    cases: Vec<CaseArg>,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Hinge coefficients for the size/power grid.
    #[arg(long, value_delimiter = ',', default_values = ["0", "-2", "-1", "1", "2"], allow_hyphen_values = true)]
    gammas: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    nb: usize,
    /// Significance level for the test study.
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    #[arg(long, default_value_t = 1.06)]
    bandwidth_mult: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum, default_value = "normal")]
    case: CaseArg,
    /// Bandwidth multipliers to evaluate.
    #[arg(long, value_delimiter = ',', default_values = ["0.1", "0.5", "1.0", "1.5", "2.0"])]
    c_values: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    nb: usize,
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli.threads.or_else(|| {
        std::env::var("BENTRANK_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global();
    }

    let outcome = match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Test(args) => run_test(args),
        Command::Cv(args) => run_cv(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Sweep(args) => run_sweep(args),
    };

    match outcome {
        Ok(code) => code,
        Err(err) => {
            let (kind, code) = classify_error(&err);
            let record = json!({
                "error": { "kind": kind, "message": format!("{err:#}") }
            });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}

fn classify_error(err: &anyhow::Error) -> (&'static str, u8) {
    if let Some(core_err) = err.downcast_ref::<bentrank_core::Error>() {
        match core_err {
            bentrank_core::Error::DidNotConverge { .. } => ("non_convergence", 3),
            bentrank_core::Error::ChangePointUnidentified { .. } => ("changepoint_unidentified", 4),
            _ => ("invalid_input", 2),
        }
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        ("io", 2)
    } else {
        ("error", 2)
    }
}

fn load(data: &DataArgs) -> Result<Ingested> {
    let mapping = ColumnMapping {
        response: data.response.clone(),
        threshold: data.threshold.clone(),
        covariates: data.covariates.clone(),
        add_intercept: !data.no_intercept,
    };
    let ingested = ingest_csv(&data.input, &mapping)?;
    if !ingested.dropped_lines.is_empty() {
        eprintln!(
            "warning: dropped {} row(s) with missing values at line(s) {:?}",
            ingested.dropped_lines.len(),
            ingested.dropped_lines
        );
    }
    Ok(ingested)
}

fn parse_tau_init(raw: &str) -> Result<TauInit> {
    if raw.eq_ignore_ascii_case("auto") {
        Ok(TauInit::Auto)
    } else {
        let v: f64 = raw
            .parse()
            .with_context(|| format!("--tau-init must be 'auto' or a number, got '{raw}'"))?;
        Ok(TauInit::Fixed(v))
    }
}

fn curve_grid(dataset: &Dataset, points: usize) -> (Vec<f64>, Vec<f64>) {
    let (zmin, zmax) = dataset.z_range();
    let points = points.max(2);
    let zs: Vec<f64> = (0..points)
        .map(|i| zmin + (zmax - zmin) * i as f64 / (points - 1) as f64)
        .collect();
    let x_row: Vec<f64> = (0..dataset.p())
        .map(|j| {
            let col = dataset.x().column(j);
            col.iter().sum::<f64>() / dataset.n() as f64
        })
        .collect();
    (zs, x_row)
}

fn run_fit(args: FitArgs) -> Result<ExitCode> {
    let ingested = load(&args.data)?;
    let dataset = &ingested.dataset;
    let config = FitConfig {
        tau_init: parse_tau_init(&args.tau_init)?,
        ci_level: args.ci_level,
        ..FitConfig::default()
    };
    let test_config = TestConfig {
        nb: args.nb,
        bandwidth_mult: args.bandwidth_mult,
        kernel: args.kernel.into(),
        seed: args.seed,
        ..TestConfig::default()
    };

    let mut fits: Vec<(&'static str, BentLineFit)> = Vec::new();
    let mut tests = Vec::new();

    if args.method.includes_rank() {
        if args.test {
            let result = cusum::change_point_test(dataset, &test_config)?;
            tests.push(report::test_summary("rank", &result));
        }
        fits.push(("rank", bent::fit_bent_line(dataset, &config)?));
    }
    if args.method.includes_ls() {
        if args.test {
            let result = ls::ls_cusum_test(dataset, &test_config)?;
            tests.push(report::test_summary("ls", &result));
        }
        fits.push(("ls", ls::fit_ls_bent_line(dataset, &config)?));
    }

    let (zs, x_row) = curve_grid(dataset, args.curve_points);
    let mut summaries = Vec::new();
    for (method, fit) in &fits {
        let summary = report::fit_summary(method, &ingested.covariate_names, fit);
        if args.output.wants(Format::Csv) {
            report::write_text(
                &args.output.out,
                &format!("fit_{method}.csv"),
                &report::param_table_csv(&summary),
            )?;
            let predictions: Vec<f64> = zs
                .iter()
                .map(|&z| fit.params.predict(&x_row, z))
                .collect::<bentrank_core::Result<_>>()?;
            report::write_text(
                &args.output.out,
                &format!("curve_{method}.csv"),
                &report::curve_csv(&zs, &predictions, &x_row, &ingested.covariate_names),
            )?;
        }
        summaries.push(summary);
    }
    if args.output.wants(Format::Csv) {
        for test in &tests {
            report::write_text(
                &args.output.out,
                &format!("test_{}.csv", test.method),
                &report::test_table_csv(test),
            )?;
        }
    }

    if args.output.wants(Format::Json) {
        let config_echo = json!({
            "input": args.data.input,
            "response": args.data.response,
            "threshold": args.data.threshold,
            "covariates": ingested.covariate_names,
            "method": args.method,
            "ci_level": args.ci_level,
            "tau_init": args.tau_init,
            "test": args.test,
            "nb": args.nb,
            "bandwidth_mult": args.bandwidth_mult,
            "n": dataset.n(),
            "dropped_lines": ingested.dropped_lines,
        });
        let payload = json!({
            "meta": report::meta("fit", args.seed, config_echo),
            "fits": summaries,
            "tests": tests,
        });
        report::write_json(&args.output.out, "fit_report.json", &payload)?;
    }

    for (method, fit) in &fits {
        if !fit.converged {
            eprintln!(
                "{}",
                json!({"error": {
                    "kind": "non_convergence",
                    "message": format!(
                        "{method} fit did not converge within {} iterations (eta={:.3e}); outputs were written for diagnosis",
                        fit.iterations, fit.eta_final
                    ),
                }})
            );
            return Ok(ExitCode::from(3));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_test(args: TestArgs) -> Result<ExitCode> {
    let ingested = load(&args.data)?;
    let dataset = &ingested.dataset;
    let test_config = TestConfig {
        nb: args.nb,
        bandwidth_mult: args.bandwidth_mult,
        kernel: args.kernel.into(),
        seed: args.seed,
        ..TestConfig::default()
    };

    let mut tests = Vec::new();
    if args.method.includes_rank() {
        tests.push(report::test_summary(
            "rank",
            &cusum::change_point_test(dataset, &test_config)?,
        ));
    }
    if args.method.includes_ls() {
        tests.push(report::test_summary(
            "ls",
            &ls::ls_cusum_test(dataset, &test_config)?,
        ));
    }

    if args.output.wants(Format::Csv) {
        for test in &tests {
            report::write_text(
                &args.output.out,
                &format!("test_{}.csv", test.method),
                &report::test_table_csv(test),
            )?;
            report::write_text(
                &args.output.out,
                &format!("test_{}_path.csv", test.method),
                &report::test_path_csv(test),
            )?;
            report::write_text(
                &args.output.out,
                &format!("test_{}_bootstrap.csv", test.method),
                &report::test_bootstrap_csv(test),
            )?;
        }
    }
    if args.output.wants(Format::Json) {
        let config_echo = json!({
            "input": args.data.input,
            "response": args.data.response,
            "threshold": args.data.threshold,
            "covariates": ingested.covariate_names,
            "method": args.method,
            "nb": args.nb,
            "bandwidth_mult": args.bandwidth_mult,
            "kernel": args.kernel,
            "n": dataset.n(),
            "dropped_lines": ingested.dropped_lines,
        });
        let payload = json!({
            "meta": report::meta("test", args.seed, config_echo),
            "tests": tests,
        });
        report::write_json(&args.output.out, "test_report.json", &payload)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_cv(args: CvArgs) -> Result<ExitCode> {
    let ingested = load(&args.data)?;
    let dataset = &ingested.dataset;
    let config = FitConfig {
        ci_level: args.ci_level,
        ..FitConfig::default()
    };

    let mut rows = Vec::new();
    if args.method.includes_rank() {
        let r = bent::kfold_prediction_error(dataset, args.kfold, &config, args.seed)?;
        rows.push(("rank".to_string(), r.per_fold, r.total));
    }
    if args.method.includes_ls() {
        let r = ls::ls_kfold_prediction_error(dataset, args.kfold, &config, args.seed)?;
        rows.push(("ls".to_string(), r.per_fold, r.total));
    }

    if args.output.wants(Format::Csv) {
        report::write_text(&args.output.out, "cv.csv", &report::cv_csv(&rows))?;
    }
    if args.output.wants(Format::Json) {
        let config_echo = json!({
            "input": args.data.input,
            "kfold": args.kfold,
            "method": args.method,
            "n": dataset.n(),
            "dropped_lines": ingested.dropped_lines,
        });
        let folds: Vec<serde_json::Value> = rows
            .iter()
            .map(|(method, per_fold, total)| {
                json!({"method": method, "per_fold": per_fold, "total": total})
            })
            .collect();
        let payload = json!({
            "meta": report::meta("cv", args.seed, config_echo),
            "prediction_error": folds,
        });
        report::write_json(&args.output.out, "cv_report.json", &payload)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let mut report_all = sim::SimReport::default();

    if matches!(args.study, StudyArg::Estimation | StudyArg::Both) {
        for (idx, &case) in args.cases.iter().enumerate() {
            let scenario = sim::SimScenario {
                n: args.n,
                reps: args.reps,
                seed: bentrank_core::rng::derive_seed(args.seed, 100, idx as u64),
                ..sim::SimScenario::reference(case.into(), args.reps, args.seed)
            };
            let part = sim::run_estimation_study(&scenario, &FitConfig::default());
            report_all = report_all.merge(part);
        }
    }
    if matches!(args.study, StudyArg::Test | StudyArg::Both) {
        let options = TestStudyOptions {
            cases: args.cases.iter().map(|&c| c.into()).collect(),
            gammas: args.gammas.clone(),
            n: args.n,
            reps: args.reps,
            nb: args.nb,
            level: args.level,
            bandwidth_mult: args.bandwidth_mult,
            seed: args.seed,
        };
        let part = sim::run_test_study(&options)?;
        report_all = report_all.merge(part);
    }

    if args.output.wants(Format::Csv) {
        if !report_all.estimation.is_empty() {
            report::write_text(
                &args.output.out,
                "estimation_summary.csv",
                &sim::estimation_csv(&report_all),
            )?;
        }
        if !report_all.test_cells.is_empty() {
            report::write_text(
                &args.output.out,
                "test_summary.csv",
                &sim::test_csv(&report_all),
            )?;
        }
    }
    if args.output.wants(Format::Json) {
        let config_echo = json!({
            "study": args.study,
            "cases": args.cases,
            "reps": args.reps,
            "n": args.n,
            "gammas": args.gammas,
            "nb": args.nb,
            "level": args.level,
        });
        let payload = json!({
            "meta": report::meta("simulate", args.seed, config_echo),
            "report": report_all,
        });
        report::write_json(&args.output.out, "simulate_report.json", &payload)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_sweep(args: SweepArgs) -> Result<ExitCode> {
    let options = SweepOptions {
        case: args.case.into(),
        c_values: args.c_values.clone(),
        n: args.n,
        reps: args.reps,
        nb: args.nb,
        level: args.level,
        seed: args.seed,
    };
    let report_all = sim::bandwidth_sweep(&options)?;

    if args.output.wants(Format::Csv) {
        report::write_text(&args.output.out, "sweep.csv", &sim::sweep_csv(&report_all))?;
    }
    if args.output.wants(Format::Json) {
        let config_echo = json!({
            "case": args.case,
            "c_values": args.c_values,
            "reps": args.reps,
            "n": args.n,
            "nb": args.nb,
            "level": args.level,
        });
        let payload = json!({
            "meta": report::meta("sweep", args.seed, config_echo),
            "report": report_all,
        });
        report::write_json(&args.output.out, "sweep_report.json", &payload)?;
    }
    Ok(ExitCode::SUCCESS)
}
