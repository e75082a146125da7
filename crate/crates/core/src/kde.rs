//! Kernel density estimation helpers.

use serde::{Deserialize, Serialize};

use crate::stats;

/// Density kernel. Epanechnikov is the default for residual densities; the
/// Gaussian kernel is used for the closed-form squared-density integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Gaussian,
}

impl Kernel {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => stats::standard_normal_pdf(u),
        }
    }
}

/// Rule-of-thumb bandwidth `mult * sd * n^(-1/5)`.
pub fn rule_of_thumb_bandwidth(values: &[f64], mult: f64) -> f64 {
    let sd = stats::sample_sd(values).unwrap_or(0.0);
    mult * sd * (values.len() as f64).powf(-0.2)
}

/// Evaluate the kernel density estimate of `sample` at each point of `at`.
pub fn density_at(at: &[f64], sample: &[f64], bandwidth: f64, kernel: Kernel) -> Vec<f64> {
    let n = sample.len() as f64;
    at.iter()
        .map(|&x| {
            sample
                .iter()
                .map(|&s| kernel.eval((x - s) / bandwidth))
                .sum::<f64>()
                / (n * bandwidth)
        })
        .collect()
}

/// Closed form of `∫ fhat(u)^2 du` for a Gaussian-kernel estimate: the
/// convolution of two Gaussians of width h is a Gaussian of width h*sqrt(2),
/// so the integral reduces to a double sum over the sample.
pub fn squared_density_integral_gaussian(sample: &[f64], bandwidth: f64) -> f64 {
    let n = sample.len();
    let norm = 1.0 / (2.0 * bandwidth * std::f64::consts::PI.sqrt());
    let inv = 1.0 / (4.0 * bandwidth * bandwidth);
    let mut total = 0.0;
    for i in 0..n {
        // diagonal contributes exp(0) once; off-diagonal pairs twice
        total += 1.0;
        for j in (i + 1)..n {
            let d = sample[i] - sample[j];
            total += 2.0 * (-d * d * inv).exp();
        }
    }
    total * norm / (n * n) as f64
}
