//! Seeded random streams.
//!
//! Every consumer of randomness in a run draws from its own ChaCha stream so
//! that, for example, objective sub-sampling never perturbs the data stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream identifiers for the independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    ObjectiveSample = 2,
    Data = 3,
    EndTaskData = 4,
    DevHead = 5,
    Mask = 6,
    Split = 7,
    Stability = 8,
    Eval = 9,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Portable 64-bit mix of `(seed, index)`: `splitmix64(splitmix64(seed) ^ index)`.
pub fn mix_seed_index(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}
