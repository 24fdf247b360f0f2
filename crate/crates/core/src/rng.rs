//! Named random streams derived from one experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STEPSIZES: &str = "stepsizes";
pub const DISTURBANCE: &str = "disturbance";
pub const STRATEGY: &str = "strategy";
pub const PIVOT: &str = "pivot";
pub const INITIAL_BIDS: &str = "initial_bids";
pub const UMAX: &str = "umax";

/// Seed of the sub-stream `name`.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h
}

pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, name))
}
