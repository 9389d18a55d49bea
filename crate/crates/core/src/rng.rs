//! Named random streams derived from one 64-bit seed.
//!
//! Each pipeline stage draws from its own stream ("split", "mask", "init",
//! "batch", ...) so that changing how much randomness one stage consumes
//! never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::text::seeded_hash;

pub type StreamRng = ChaCha8Rng;

pub fn stream_seed(seed: u64, name: &str) -> u64 {
    seeded_hash(name.as_bytes(), seed)
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, name))
}
