//! Seeded, splittable random streams.
//!
//! Every stochastic routine in the crate takes an explicit `seed`. Independent
//! sub-streams of one seed are addressed by a stream id, so that e.g. the
//! basis of a generative model and its samples never share random numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type LabRng = ChaCha12Rng;

/// Stream ids used inside the crate. Callers may use any other value.
pub mod streams {
    pub const SAMPLES: u64 = 1;
    pub const INIT: u64 = 2;
    pub const BASIS: u64 = 3;
    pub const MASKS: u64 = 4;
    pub const LATENTS: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const MINIBATCH: u64 = 7;
}

/// Generator for `(seed, stream)`. Distinct streams of the same seed are
/// statistically independent.
pub fn stream_rng(seed: u64, stream: u64) -> LabRng {
    let mut rng = LabRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
