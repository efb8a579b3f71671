//! Seeded, splittable random streams.
//!
//! Every stochastic component draws from a ChaCha8 stream addressed by
//! `(seed, domain, index)`, so a bootstrap replicate or a simulated period
//! produces the same numbers regardless of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamDomain {
    Bootstrap = 1,
    Simulation = 2,
    Holdout = 3,
}

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, domain: StreamDomain, index: u64) -> StreamRng {
    debug_assert!(index < 1 << 48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) | index);
    rng
}
