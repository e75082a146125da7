//! Deterministic stream derivation for parallel replicates.
//!
//! Every replicate draws from a generator seeded by mixing (master seed, stream
//! tag, replicate index), so results do not depend on the parallel schedule.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit seed from a (master, tag, index) triple.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ tag) ^ index)
}

/// Derive an independent generator for one replicate of one stream.
pub fn derive_rng(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}

/// Stream tags used by the crate; values are arbitrary but fixed.
pub mod tag {
    pub const SIM_DATA: u64 = 0x01;
    pub const BOOTSTRAP: u64 = 0x02;
    pub const KFOLD: u64 = 0x03;
    pub const TEST_STUDY: u64 = 0x04;
    pub const SWEEP: u64 = 0x05;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: f64 = derive_rng(7, tag::SIM_DATA, 0).random();
        let b: f64 = derive_rng(7, tag::SIM_DATA, 0).random();
        assert_eq!(a, b);
        let c: f64 = derive_rng(7, tag::SIM_DATA, 1).random();
        let d: f64 = derive_rng(7, tag::BOOTSTRAP, 0).random();
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
