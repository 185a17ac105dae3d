//! Deterministic seeded random streams.
//!
//! Every randomized routine takes a `u64` seed and derives independent
//! named substreams from it, so reruns with the same seed reproduce byte
//! by byte while distinct consumers (sampling, optimizer restarts, noise)
//! never share a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Folds a substream name into a seed: FNV-1a over the name, mixed with the
/// base seed. Useful when a derived seed must itself feed a routine that
/// derives its own substreams.
pub fn derive(seed: u64, name: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    seed ^ h
}

/// A freshly keyed generator for the named substream.
pub fn substream(seed: u64, name: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(seed, name))
}
