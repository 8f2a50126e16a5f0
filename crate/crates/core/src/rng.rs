//! Seeded random streams.
//!
//! All randomness goes through ChaCha8, a counter-based generator. A `(seed,
//! stream)` pair fully determines the sequence, so independent consumers
//! (covariates, noise, treatment assignment, fold shuffles) draw from disjoint
//! streams of the same seed and stay reproducible regardless of call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream identifiers used inside the crate.
pub mod streams {
    pub const COVARIATES: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const ASSIGNMENT: u64 = 3;
    pub const FOLDS: u64 = 4;
    pub const INNER_FOLDS: u64 = 5;
}

pub fn rng_for(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed, e.g. one per Monte Carlo replicate or per fold.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
