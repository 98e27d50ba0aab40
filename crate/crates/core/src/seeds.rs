//! Deterministic seed derivation.
//!
//! Every stochastic stage takes an explicit `u64` seed. Sub-seeds (one per
//! subject, per LOSO iteration, per sweep point, ...) are derived by folding
//! tag words through SplitMix64, so results never depend on scheduling or on
//! how many random draws an earlier unit consumed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer step.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a master seed and a list of tag words.
///
/// Tags identify the consumer, e.g. `&[STREAM_LOSO, iteration]`.
pub fn derive(master: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    s
}

/// Seeded RNG for one consumer stream.
pub fn rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, tags))
}

// Stream tags. Keeping them distinct means two stages fed the same master
// seed never consume from the same stream.
pub const STREAM_SUBJECT: u64 = 1;
pub const STREAM_BALANCE: u64 = 2;
pub const STREAM_FOLDS: u64 = 3;
pub const STREAM_LOSO: u64 = 4;
pub const STREAM_SCRAMBLE: u64 = 5;
pub const STREAM_SWEEP: u64 = 6;
pub const STREAM_EFFECT: u64 = 7;
