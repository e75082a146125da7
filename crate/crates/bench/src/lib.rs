//! Data builders shared by the benchmarks.

use bentrank_core::sim::{ErrorKind, SimScenario};
use bentrank_core::{sim, Dataset};

/// One replicate of the reference simulation scenario.
pub fn reference_dataset(n: usize, seed: u64) -> Dataset {
    let scenario = SimScenario {
        n,
        ..SimScenario::reference(ErrorKind::Normal, 1, seed)
    };
    sim::generate(&scenario, 0)
}
