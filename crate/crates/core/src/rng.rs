//! Seeded substreams.
//!
//! Every random consumer derives its generator from the master seed plus a
//! `(domain, index)` pair: ChaCha8 keyed by `seed_from_u64(master)` with the
//! stream number `domain << 48 | index`. Work split into blocks or replicates
//! draws from its own stream, so results do not depend on the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct domains never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Simulation = 1,
    Shuffle = 2,
    Subsample = 3,
    Bootstrap = 4,
    Stability = 5,
    Oracle = 6,
}

const INDEX_BITS: u32 = 48;

/// Generator for block or replicate `index` of `domain`.
pub fn substream(master: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    assert!(index < 1 << INDEX_BITS, "substream index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((domain as u64) << INDEX_BITS) | index);
    rng
}
