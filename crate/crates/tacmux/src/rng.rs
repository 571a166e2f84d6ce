//! Deterministic, purpose-keyed random streams.
//!
//! Every stochastic effect (edge jitter, channel noise, harness word draws)
//! pulls from its own stream derived from the master seed plus a fixed tag
//! path, so simulations are reproducible bit for bit no matter how work is
//! scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Kept in one place so derivations never collide.
pub mod tag {
    pub const JITTER: u64 = 0x4a49_5454;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const WORDS: u64 = 0x574f_5244;
    pub const ACTIVITY: u64 = 0x4143_5456;
    pub const PRESSURE: u64 = 0x5052_4553;
    pub const TRIAL: u64 = 0x5452_4941;
    pub const CELL: u64 = 0x4345_4c4c;
    pub const ROW: u64 = 0x524f_5721;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix the master seed with a tag path into a single stream seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut acc = splitmix64(base);
    for &p in path {
        acc = splitmix64(acc ^ p);
    }
    acc
}

/// A ChaCha stream for the given tag path.
pub fn stream(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}
