//! Splittable seeding.
//!
//! Every random stream in the crate is a ChaCha stream addressed by a 64-bit
//! seed and a stream index, so parallel workers can regenerate any piece of a
//! run without coordinating.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used below a drop seed.
pub(crate) const STREAM_USERS: u64 = 0;
pub(crate) const STREAM_SHADOWING: u64 = 1;
pub(crate) const STREAM_AP_PLACEMENT: u64 = 2;
pub(crate) const TAG_CHANNELS: u64 = 0x6368_616e;

/// Seed of one drop, `master ⊕ drop_index`.
pub fn drop_seed(master: u64, drop_index: u64) -> u64 {
    master ^ drop_index
}

/// Derives an independent child seed from `seed` and a tag (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
