//! Seed derivation.
//!
//! All randomness in the library flows from a single 64-bit root seed.
//! Substreams (per trial, per game role) are derived with [`child_seed`],
//! which feeds `root + (index + 1) * GOLDEN` through the SplitMix64
//! finalizer. Distinct indices map to distinct, well-mixed seeds, and the
//! derivation is pure, so trials can run in any order or in parallel
//! without changing results.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for substream `index` of the stream rooted at `root`.
pub fn child_seed(root: u64, index: u64) -> u64 {
    splitmix64(root.wrapping_add((index.wrapping_add(1)).wrapping_mul(GOLDEN)))
}

/// Construct the deterministic generator used throughout the library.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
