//! Seeded random streams.
//!
//! Every source of randomness in a run is a [`SimRng`] derived from one
//! 64-bit base seed and a fixed label, so adding a consumer never shifts the
//! draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const PROBLEM_INIT: &str = "problem-init";
pub const PROBLEM_DYNAMICS: &str = "problem-dynamics";
pub const SKETCH: &str = "sketch";

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes `base` with a label hash (FNV-1a followed by a SplitMix64 finalizer).
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = base ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(base: u64, label: &str) -> SimRng {
    seeded(derive_seed(base, label))
}
