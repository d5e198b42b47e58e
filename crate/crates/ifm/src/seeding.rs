//! Seed derivation for independent random substreams.
//!
//! Every consumer of randomness (an example, a layer pair at a given step, an
//! epoch permutation) gets its own generator keyed by a tuple of integers, so
//! results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of keys into one 64-bit seed.
pub fn derive_seed(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(GOLDEN, |acc, &k| mix64(acc.wrapping_add(GOLDEN) ^ mix64(k)))
}

pub fn substream(keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(keys))
}
