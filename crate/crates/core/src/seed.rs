//! Counter-based seed derivation.
//!
//! Child streams are a pure function of `(base, index)`, so work split across
//! threads draws the same numbers no matter how it is scheduled.

use rand::SeedableRng;

use crate::FilterRng;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of child stream `index` under `base`.
#[inline]
pub fn derive(base: u64, index: u64) -> u64 {
    mix64(mix64(base) ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// A fresh generator for child stream `index` under `base`.
pub fn child_rng(base: u64, index: u64) -> FilterRng {
    FilterRng::seed_from_u64(derive(base, index))
}
