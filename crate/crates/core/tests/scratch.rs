use std::time::Instant;

use bentrank_core::sim::{self, ErrorKind, SimScenario, TestStudyOptions};
use bentrank_core::FitConfig;

#[test]
#[ignore]
fn probe_estimation_normal() {
    let t0 = Instant::now();
    let scenario = SimScenario::reference(ErrorKind::Normal, 400, 20260808);
    let report = sim::run_estimation_study(&scenario, &FitConfig::default());
    println!("elapsed: {:?}", t0.elapsed());
    println!("{}", sim::estimation_csv(&report));
}

#[test]
#[ignore]
fn probe_estimation_contaminated() {
    let t0 = Instant::now();
    let scenario = SimScenario::reference(ErrorKind::contaminated(0.10), 400, 20260808);
    let report = sim::run_estimation_study(&scenario, &FitConfig::default());
    println!("elapsed: {:?}", t0.elapsed());
    println!("{}", sim::estimation_csv(&report));
}

#[test]
#[ignore]
fn probe_test_size() {
    let t0 = Instant::now();
    let options = TestStudyOptions {
        cases: vec![ErrorKind::Normal],
        gammas: vec![0.0],
        reps: 100,
        nb: 300,
        seed: 20260808,
        ..TestStudyOptions::default()
    };
    let report = sim::run_test_study(&options).unwrap();
    println!("elapsed: {:?}", t0.elapsed());
    println!("{}", sim::test_csv(&report));
}

#[test]
#[ignore]
fn probe_case3_acceptance_seed() {
    let t0 = Instant::now();
    let scenario = SimScenario::reference(ErrorKind::contaminated(0.10), 500, 20260808);
    let report = sim::run_estimation_study(&scenario, &FitConfig::default());
    println!("elapsed: {:?}", t0.elapsed());
    println!("{}", sim::estimation_csv(&report));
}

#[test]
#[ignore]
fn probe_case3_seeds() {
    for seed in [1u64, 42, 314159, 20260809] {
        let t0 = Instant::now();
        let scenario = SimScenario::reference(ErrorKind::contaminated(0.10), 500, seed);
        let report = sim::run_estimation_study(&scenario, &FitConfig::default());
        let ls_sd = report
            .estimation
            .iter()
            .find(|r| r.method == "ls" && r.parameter == "alpha_0")
            .and_then(|r| r.sd)
            .unwrap_or(f64::NAN);
        let rank_mse = report
            .estimation
            .iter()
            .find(|r| r.method == "rank" && r.parameter == "tau")
            .map(|r| r.mse)
            .unwrap_or(f64::NAN);
        let failures: Vec<String> = report
            .failures
            .iter()
            .map(|f| format!("{}:{}", f.method, f.failed))
            .collect();
        println!(
            "seed {seed}: ls sd(alpha0) {ls_sd:.1}, rank tau mse {rank_mse:.4}, failures {:?}, {:?}",
            failures,
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_all_cells_seed42() {
    // criterion 3 normal case
    let t0 = Instant::now();
    let scenario = SimScenario::reference(ErrorKind::Normal, 500, 42);
    let report = sim::run_estimation_study(&scenario, &FitConfig::default());
    for row in &report.estimation {
        if row.method == "rank" && row.parameter == "tau" {
            println!("tau row: bias {:.4} sd {:?} cp {:.4}", row.bias, row.sd, row.cp);
        }
    }
    println!("estimation elapsed {:?}", t0.elapsed());

    // criterion 4 sizes + criterion 5 power
    let t0 = Instant::now();
    let options = sim::TestStudyOptions {
        cases: vec![ErrorKind::Normal, ErrorKind::contaminated(0.10)],
        gammas: vec![0.0, -2.0, -1.0],
        reps: 500,
        nb: 500,
        seed: 42,
        ..sim::TestStudyOptions::default()
    };
    let rep2 = sim::run_test_study(&options).unwrap();
    println!("{}", sim::test_csv(&rep2));
    println!("test study elapsed {:?}", t0.elapsed());

    // criterion 6 sweep
    let sweep = sim::bandwidth_sweep(&sim::SweepOptions {
        c_values: vec![0.1, 1.06, 2.0],
        reps: 100,
        nb: 500,
        seed: 42,
        ..sim::SweepOptions::default()
    })
    .unwrap();
    println!("{}", sim::sweep_csv(&sweep));
}
