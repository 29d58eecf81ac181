//! Deterministic seed derivation.
//!
//! Every random quantity in a run flows from one base seed through named
//! sub-streams ("init", "inject/1", "verify", ...), so that adding draws to
//! one stream never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives a child seed from a base seed and a stream name (FNV-1a over the
/// name, folded into the base with an odd multiplier).
pub fn derive_seed(base: u64, stream: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for byte in stream.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(FNV_PRIME);
    }
    // splitmix-style finalizer over the combined value
    let mut z = base ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seeded generator for the given sub-stream.
pub fn stream_rng(base: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}
