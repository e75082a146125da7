//! End-to-end tests of the `bentrank` binary: ingestion errors, fit
//! round-trips, deterministic reports and the simulation commands.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bentrank() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bentrank"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "bentrank-test-{tag}-{}",
        std::process::id()
    ));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn fit_recovers_fixture_truth_and_round_trips_the_curve() {
    let out = temp_dir("fit");
    let output = run(bentrank()
        .args(["fit", "--input"])
        .arg(fixture("bedload_synthetic.csv"))
        .args([
            "--response",
            "transport",
            "--threshold",
            "discharge",
            "--method",
            "both",
            "--seed",
            "9",
            "--threads",
            "2",
            "--out",
        ])
        .arg(&out));
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    // parameter table: noiseless truth recovered
    let table = std::fs::read_to_string(out.join("fit_rank.csv")).unwrap();
    let mut estimates = std::collections::HashMap::new();
    for line in table.lines().skip(1) {
        let mut parts = line.split(',');
        let name = parts.next().unwrap().to_string();
        let value: f64 = parts.next().unwrap().parse().unwrap();
        estimates.insert(name, value);
    }
    assert!((estimates["alpha_0[intercept]"] - -0.0053).abs() < 1e-6);
    assert!((estimates["beta"] - 0.0119).abs() < 1e-6);
    assert!((estimates["gamma"] - 0.0733).abs() < 1e-6);
    assert!((estimates["tau"] - 1.5394).abs() < 1e-6);

    // the curve file reproduces predictions computed from the re-read table
    let curve = std::fs::read_to_string(out.join("curve_rank.csv")).unwrap();
    let mut checked = 0;
    for line in curve.lines().skip(1) {
        let fields: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let (z, y_hat, x0) = (fields[0], fields[1], fields[2]);
        let rebuilt = estimates["alpha_0[intercept]"] * x0
            + estimates["beta"] * z
            + estimates["gamma"] * (z - estimates["tau"]).max(0.0);
        assert!(
            (rebuilt - y_hat).abs() < 1e-9,
            "z {z}: {rebuilt} vs {y_hat}"
        );
        checked += 1;
    }
    assert_eq!(checked, 200);
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn fit_handles_covariates_and_reports_convergence() {
    let out = temp_dir("fit-mrs");
    let output = run(bentrank()
        .args(["fit", "--input"])
        .arg(fixture("running_speed_synthetic.csv"))
        .args([
            "--response",
            "log_mrs",
            "--threshold",
            "log_mass",
            "--covariates",
            "hopper",
            "--method",
            "rank",
            "--out",
        ])
        .arg(&out));
    assert!(output.status.success());

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("fit_report.json")).unwrap())
            .unwrap();
    let fit = &report["fits"][0];
    assert_eq!(fit["method"], "rank");
    assert_eq!(fit["converged"], true);
    let params = fit["parameters"].as_array().unwrap();
    // intercept, hopper, beta, gamma, tau
    assert_eq!(params.len(), 5);
    let by_name = |name: &str| -> f64 {
        params
            .iter()
            .find(|p| p["parameter"] == name)
            .unwrap()["estimate"]
            .as_f64()
            .unwrap()
    };
    assert!((by_name("alpha_0[intercept]") - 3.208).abs() < 1e-6);
    assert!((by_name("alpha_1[hopper]") - 0.640).abs() < 1e-6);
    assert!((by_name("beta") - 0.285).abs() < 1e-6);
    assert!((by_name("gamma") - -0.409).abs() < 1e-6);
    assert!((by_name("tau") - 3.658).abs() < 1e-6);
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn non_numeric_cell_is_a_hard_error_naming_row_and_column() {
    let out = temp_dir("bad");
    let output = run(bentrank()
        .args(["fit", "--input"])
        .arg(fixture("bad_cell.csv"))
        .args(["--response", "y", "--threshold", "z", "--out"])
        .arg(&out));
    assert!(!output.status.success());
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
    assert!(stderr.contains("'z'"), "stderr: {stderr}");
    assert!(stderr.contains("oops"), "stderr: {stderr}");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn missing_values_are_dropped_with_line_numbers() {
    let out = temp_dir("missing");
    let output = run(bentrank()
        .args(["test", "--input"])
        .arg(fixture("missing_values.csv"))
        .args(["--response", "y", "--threshold", "z", "--nb", "50", "--out"])
        .arg(&out));
    // 6 usable rows remain, enough for the test to run
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("dropped 2 row(s)"), "stderr: {stderr}");
    assert!(stderr.contains('3') && stderr.contains('5'), "stderr: {stderr}");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn missing_column_is_reported() {
    let out = temp_dir("nocol");
    let output = run(bentrank()
        .args(["fit", "--input"])
        .arg(fixture("bedload_synthetic.csv"))
        .args(["--response", "nope", "--threshold", "discharge", "--out"])
        .arg(&out));
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("'nope'"), "stderr: {stderr}");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn test_reports_are_deterministic_given_a_seed() {
    let out_a = temp_dir("det-a");
    let out_b = temp_dir("det-b");
    for out in [&out_a, &out_b] {
        let output = run(bentrank()
            .args(["test", "--input"])
            .arg(fixture("bedload_synthetic.csv"))
            .args([
                "--response",
                "transport",
                "--threshold",
                "discharge",
                "--nb",
                "120",
                "--seed",
                "31",
                "--out",
            ])
            .arg(out));
        assert!(output.status.success());
    }
    let normalize = |dir: &Path| -> String {
        let text = std::fs::read_to_string(dir.join("test_report.json")).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["meta"]["timestamp"] = serde_json::json!(0);
        serde_json::to_string_pretty(&value).unwrap()
    };
    assert_eq!(normalize(&out_a), normalize(&out_b));

    // path and bootstrap tables exist for both methods
    for method in ["rank", "ls"] {
        for file in [
            format!("test_{method}.csv"),
            format!("test_{method}_path.csv"),
            format!("test_{method}_bootstrap.csv"),
        ] {
            assert!(out_a.join(&file).exists(), "missing {file}");
        }
    }
    let _ = std::fs::remove_dir_all(&out_a);
    let _ = std::fs::remove_dir_all(&out_b);
}

#[test]
fn cv_writes_per_fold_and_total_rows() {
    let out = temp_dir("cv");
    let output = run(bentrank()
        .args(["cv", "--input"])
        .arg(fixture("bedload_synthetic.csv"))
        .args([
            "--response",
            "transport",
            "--threshold",
            "discharge",
            "--kfold",
            "4",
            "--seed",
            "5",
            "--out",
        ])
        .arg(&out));
    assert!(output.status.success());
    let csv = std::fs::read_to_string(out.join("cv.csv")).unwrap();
    // header + (4 folds + total) per method
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
    let total_line = csv
        .lines()
        .find(|l| l.starts_with("rank,total"))
        .expect("total row");
    let total: f64 = total_line.rsplit(',').next().unwrap().parse().unwrap();
    assert!(total < 1e-8, "noiseless PE {total}");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn simulate_and_sweep_emit_summary_files() {
    let out = temp_dir("sim");
    let output = run(bentrank()
        .args([
            "simulate",
            "--study",
            "both",
            "--cases",
            "normal",
            "--reps",
            "4",
            "--n",
            "80",
            "--gammas",
            "0,-2",
            "--nb",
            "40",
            "--seed",
            "3",
            "--out",
        ])
        .arg(&out));
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let estimation = std::fs::read_to_string(out.join("estimation_summary.csv")).unwrap();
    assert!(estimation.starts_with("case,method,parameter,"));
    assert!(estimation.contains("normal,rank,tau"));
    let tests = std::fs::read_to_string(out.join("test_summary.csv")).unwrap();
    assert_eq!(tests.lines().count(), 5); // header + 2 gammas x 2 methods
    assert!(out.join("simulate_report.json").exists());

    let sweep_out = temp_dir("sweep");
    let output = run(bentrank()
        .args([
            "sweep",
            "--case",
            "normal",
            "--c-values",
            "0.5,1.5",
            "--reps",
            "3",
            "--n",
            "80",
            "--nb",
            "30",
            "--out",
        ])
        .arg(&sweep_out));
    assert!(output.status.success());
    let sweep = std::fs::read_to_string(sweep_out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    let _ = std::fs::remove_dir_all(&out);
    let _ = std::fs::remove_dir_all(&sweep_out);
}

#[test]
fn straight_line_data_points_user_to_the_existence_test() {
    // gamma = 0: the changepoint is unidentified and the fit must say so
    let out = temp_dir("unident");
    let line_csv = out.join("line.csv");
    let mut content = String::from("y,z\n");
    for i in 0..120 {
        let z = -2.0 + 4.0 * i as f64 / 119.0;
        content.push_str(&format!("{},{z}\n", 3.0 + 2.5 * z));
    }
    std::fs::write(&line_csv, content).unwrap();

    let output = run(bentrank()
        .args(["fit", "--input"])
        .arg(&line_csv)
        .args(["--response", "y", "--threshold", "z", "--method", "rank", "--out"])
        .arg(&out));
    assert_eq!(output.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("changepoint_unidentified"), "stderr: {stderr}");
    assert!(stderr.contains("existence test"), "stderr: {stderr}");
    let _ = std::fs::remove_dir_all(&out);
}
