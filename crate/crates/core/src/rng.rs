//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 as implemented by
//! `rand_chacha` 0.9, seeded through `SeedableRng::seed_from_u64`. A master
//! seed is split into independent substreams with ChaCha's 64-bit stream
//! selector, so work that is keyed by `(seed, stream)` produces the same
//! draws whether it runs sequentially or on separate threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name and version of the generator, echoed into experiment manifests.
pub const GENERATOR: &str = "ChaCha8 (rand_chacha 0.9, seed_from_u64 + set_stream)";

/// Generator for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A child seed: the first word of substream `label` of `seed`.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    substream(seed, label).next_u64()
}
