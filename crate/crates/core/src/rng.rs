//! Seeded randomness.
//!
//! Every random draw in the crate comes from [`HgRng`] (ChaCha with 8 rounds),
//! seeded from a 64-bit integer. Independent sub-streams are derived with
//! SplitMix64 so that, for example, per-sample generators in a dataset do not
//! overlap with the generator used for parameter initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type HgRng = ChaCha8Rng;

/// One step of the SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream `stream` from a parent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0xD1B5_4A32_D192_ED03)))
}

pub fn rng_from_seed(seed: u64) -> HgRng {
    HgRng::seed_from_u64(seed)
}

pub fn substream(seed: u64, stream: u64) -> HgRng {
    rng_from_seed(derive_seed(seed, stream))
}
