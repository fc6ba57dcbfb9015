//! Stable hashing and seed derivation.
//!
//! Everything here must produce identical values across platforms and
//! compiler versions, since derived seeds are persisted in run ledgers and
//! recomputed on resume. `std::hash` makes no such promise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// The PRNG used for every seeded draw in the crate (sampling, example
/// selection, k-means++ seeding, t-SNE initialisation).
pub type DetRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    fnv1a_seeded(FNV_OFFSET, bytes)
}

/// FNV-1a with a caller-chosen starting state.
pub fn fnv1a_seeded(state: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one seed: `h = splitmix64(h ^ part)` for
/// each part, starting from a fixed constant. Order-sensitive.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5eed_5eed_5eed_5eed_u64, |h, &p| splitmix64(h ^ p))
}
