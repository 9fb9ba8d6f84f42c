//! Named random streams.
//!
//! Every random draw comes from a ChaCha8 stream keyed by a master seed and a
//! path of integers (purpose, split, step, index, ...). Streams never depend on
//! evaluation order, so serial and parallel execution draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a seed and a path into one 64-bit key.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, path))
}

/// First element of every stream path.
pub mod purpose {
    pub const QUERY: u64 = 1;
    pub const DETECT: u64 = 2;
    pub const DECIDE: u64 = 3;
    pub const OUTCOME: u64 = 4;
}
