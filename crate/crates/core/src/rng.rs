//! Independent deterministic random streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags separating the streams. Adding a new consumer never shifts
/// the draws seen by an existing one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Signal = 1,
    Delay = 2,
    Adversary = 3,
    EdgeDelay = 4,
    Sampling = 5,
}

/// Stream for `(seed, purpose, index)`.
pub fn substream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | (index & 0xFFFF_FFFF));
    rng
}
