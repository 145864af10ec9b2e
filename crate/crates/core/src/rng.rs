//! Seeded random streams.
//!
//! Every stochastic object in the crate is a pure function of a `u64` seed. The
//! generator is ChaCha8, whose output is specified independently of platform and
//! crate version, so results are reproducible bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for a top-level seed.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for an independent sub-stream of `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
