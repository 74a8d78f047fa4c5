//! Seed plumbing. Every random choice in the pipeline flows through a
//! ChaCha8 stream derived from a user-visible `u64` seed, so runs are
//! reproducible bit for bit across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Salts for decorrelating per-subsystem streams derived from one run seed.
pub mod salt {
    pub const JAW: u64 = 0x01;
    pub const SPARSE_LABELS: u64 = 0x02;
    pub const PARAMS: u64 = 0x03;
    pub const EPOCH_ORDER: u64 = 0x04;
    pub const ORACLE_NOISE: u64 = 0x05;
    pub const GROUP_SUBSAMPLE: u64 = 0x06;
    pub const OUTLIERS: u64 = 0x07;
    pub const EVAL_SUBSAMPLE: u64 = 0x08;
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// splitmix64 finalizer; mixes a seed with a salt into a new stream seed.
pub fn derive(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn same_seed_same_stream() {
        let mut a = seeded(42);
        let mut b = seeded(42);
        for _ in 0..32 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn derived_streams_differ() {
        assert_ne!(derive(7, salt::JAW), derive(7, salt::PARAMS));
        assert_ne!(derive(7, salt::JAW), derive(8, salt::JAW));
        let mut a = seeded(derive(7, salt::JAW));
        let mut b = seeded(derive(7, salt::PARAMS));
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }
}
