//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), seeded
//! with `ChaCha8Rng::seed_from_u64(seed)` and then moved to a purpose-specific
//! stream with `set_stream`. Derived per-item seeds use the SplitMix64
//! finalizer. Both algorithms are fixed and platform independent, so keys,
//! corpora and trained weights are reproducible from their seeds alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers. Changing any of these changes every generated artifact.
pub mod streams {
    pub const KEY: u64 = 0x01;
    pub const NOISE: u64 = 0x02;
    pub const IDENTITY: u64 = 0x03;
    pub const VARIATION: u64 = 0x04;
    pub const SPLIT: u64 = 0x05;
    pub const INIT: u64 = 0x06;
    pub const SHUFFLE: u64 = 0x07;
    pub const EMBEDDING: u64 = 0x08;
    pub const GRAD_CHECK: u64 = 0x09;
}

pub type Rng = ChaCha8Rng;

/// Returns the generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 mix of `seed` and `index`, used to give each item of a batch
/// its own independent seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
