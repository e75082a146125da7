use std::time::Instant;

use bentrank_core::nalgebra::DMatrix;
use bentrank_core::sim::{self, ErrorKind, SimScenario};
use bentrank_core::{dispersion, fit_rank_linear, ranks, ScoreFunction};

#[test]
#[ignore]
fn probe_fit_cost() {
    let scenario = SimScenario::reference(ErrorKind::Normal, 1, 99);
    let ds = sim::generate(&scenario, 0);
    let n = ds.n();
    let w = DMatrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            ds.z()[i]
        } else {
            (ds.z()[i] - 0.5f64).max(0.0)
        }
    });

    // full fit cost
    let t0 = Instant::now();
    let reps = 50;
    let mut sink = 0.0;
    for _ in 0..reps {
        let fit = fit_rank_linear(ds.y(), &w, ScoreFunction::Wilcoxon).unwrap();
        sink += fit.coefficients[0];
    }
    println!("full fit: {:?} each (sink {sink})", t0.elapsed() / reps);

    // one objective evaluation cost
    let t0 = Instant::now();
    let m = 20_000u32;
    let mut sink2 = 0.0;
    for _ in 0..m {
        let residuals: Vec<f64> = (0..n)
            .map(|i| ds.y()[i] - w[(i, 0)] * 2.5 - w[(i, 1)] * -4.0)
            .collect();
        sink2 += dispersion(&residuals, ScoreFunction::Wilcoxon).unwrap();
    }
    println!("objective eval: {:?} each (sink {sink2})", t0.elapsed() / m);

    // ranks cost alone
    let residuals: Vec<f64> = (0..n)
        .map(|i| ds.y()[i] - w[(i, 0)] * 2.5 - w[(i, 1)] * -4.0)
        .collect();
    let t0 = Instant::now();
    let mut sink3 = 0.0;
    for _ in 0..m {
        sink3 += ranks(&residuals).unwrap()[0];
    }
    println!("ranks: {:?} each (sink {sink3})", t0.elapsed() / m);

    // raw pair sweep cost (emulating one IRLS pass)
    let t0 = Instant::now();
    let sweeps = 2_000u32;
    let mut acc = [0.0f64; 5];
    for _ in 0..sweeps {
        for i in 0..n {
            for j in (i + 1)..n {
                let dz = w[(i, 0)] - w[(j, 0)];
                let dh = w[(i, 1)] - w[(j, 1)];
                let dy = ds.y()[i] - ds.y()[j];
                let r = dy - dz * 2.5 - dh * -4.0;
                let wgt = 1.0 / r.abs().max(1e-8);
                acc[0] += wgt * dz * dz;
                acc[1] += wgt * dz * dh;
                acc[2] += wgt * dh * dh;
                acc[3] += wgt * dz * dy;
                acc[4] += wgt * dh * dy;
            }
        }
    }
    println!("raw pair sweep: {:?} each (acc {})", t0.elapsed() / sweeps, acc[0]);
}

#[test]
#[ignore]
fn probe_optimality_which() {
    use bentrank_core::rng::derive_rng;
    use rand::Rng;
    let scenario = SimScenario::reference(ErrorKind::Normal, 50, 31);
    for rep in 0..30u64 {
        let ds = sim::generate(&scenario, rep);
        for q in [2usize, 4] {
            let n = ds.n();
            let w = if q == 2 {
                DMatrix::from_fn(n, 2, |i, j| {
                    if j == 0 { ds.z()[i] } else { (ds.z()[i] - 0.5f64).max(0.0) }
                })
            } else {
                DMatrix::from_fn(n, 4, |i, j| {
                    let z = ds.z()[i];
                    match j {
                        0 => z,
                        1 => (z - 0.4f64).max(0.0),
                        2 => if z > 0.4 { -1.0 } else { 0.0 },
                        _ => (i as f64 * 0.711).sin(),
                    }
                })
            };
            let fit = fit_rank_linear(ds.y(), &w, ScoreFunction::Wilcoxon).unwrap();
            let d_hat = fit.dispersion_value;
            let mut rng = derive_rng(1000 + rep, q as u64, 0);
            let mut worst: f64 = f64::NEG_INFINITY;
            let mut worst_b: Vec<f64> = vec![];
            for _ in 0..100 {
                let mut delta: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
                delta.iter_mut().for_each(|d| *d *= 1e-3 / norm);
                let b: Vec<f64> = fit.coefficients.iter().zip(&delta).map(|(c, d)| c + d).collect();
                let residuals: Vec<f64> = (0..n)
                    .map(|i| ds.y()[i] - (0..q).map(|j| w[(i, j)] * b[j]).sum::<f64>())
                    .collect();
                let d_pert = dispersion(&residuals, ScoreFunction::Wilcoxon).unwrap();
                if d_hat - d_pert > worst { worst = d_hat - d_pert; worst_b = b.clone(); }
            }
            if worst > 1e-10 {
                println!("rep {rep} q {q}: worst {worst:.3e} at b={worst_b:?} vs coef={:?}", fit.coefficients);
            }
        }
    }
}

#[test]
#[ignore]
fn probe_rep8() {
    let scenario = SimScenario::reference(ErrorKind::Normal, 50, 31);
    let ds = sim::generate(&scenario, 8);
    let n = ds.n();
    let w = DMatrix::from_fn(n, 2, |i, j| {
        if j == 0 { ds.z()[i] } else { (ds.z()[i] - 0.5f64).max(0.0) }
    });
    let fit = fit_rank_linear(ds.y(), &w, ScoreFunction::Wilcoxon).unwrap();
    println!("coef {:?} dispersion {:.12}", fit.coefficients, fit.dispersion_value);
    // objective at the better point found by random probing
    let b = [2.406036888286372, -4.063051874010367];
    let residuals: Vec<f64> = (0..n)
        .map(|i| ds.y()[i] - w[(i, 0)] * b[0] - w[(i, 1)] * b[1])
        .collect();
    println!("better point obj {:.12}", dispersion(&residuals, ScoreFunction::Wilcoxon).unwrap());
}
