//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by a
//! path of integers rooted at a user seed. A path is hashed into the 256-bit
//! ChaCha key with SplitMix64, so streams for distinct paths are independent
//! and each stream is a pure function of its path. Work split across threads
//! therefore yields the same numbers regardless of scheduling.
//!
//! Path conventions:
//!
//! | consumer                              | path                                  |
//! |---------------------------------------|---------------------------------------|
//! | population `k` of a generated dataset | `(seed, DATASET, k)`                  |
//! | bootstrap replicate `b`               | `(seed, BOOTSTRAP, b)`                |
//! | Monte Carlo dataset `r`, grid point `g` | `derive_seed(master, [g, r])`       |
//! | Monte Carlo bootstrap, scheme `s`     | `derive_seed(master, [g, r, RESAMPLE, s])` |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Concrete generator handed to every sampler.
pub type StreamRng = ChaCha8Rng;

/// Domain tags separating the stream families.
pub mod domain {
    pub const DATASET: u64 = 0x6461_7461;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const RESAMPLE: u64 = 0x7273_6d70;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn path_hash(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for (depth, &component) in path.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(component ^ (depth as u64).rotate_left(32)));
    }
    h
}

/// Derives a child seed from `seed` and a path.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path_hash(seed, path)
}

/// Opens the stream addressed by `(seed, path)`.
pub fn substream(seed: u64, path: &[u64]) -> StreamRng {
    let mut state = path_hash(seed, path);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
