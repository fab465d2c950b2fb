//! Named RNG sub-streams derived from a single run seed.
//!
//! Every consumer of randomness (data subsampling, parameter init, train
//! batching, dev batching) draws from its own labeled stream, so a change in
//! how one component consumes randomness cannot perturb the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for the `(seed, label)` pair.
pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    let h = fnv1a64(label.as_bytes());
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&h.to_le_bytes());
    key[16..24].copy_from_slice(&(seed ^ h.rotate_left(17)).to_le_bytes());
    key[24..32].copy_from_slice(&seed.wrapping_add(h).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
