//! Seed derivation and counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream addressed by a
//! `(key, stream)` pair. Keys are derived from a master seed plus purpose tags,
//! streams index the object being simulated (a trajectory, a transition source
//! state, a tree). Output therefore never depends on iteration order or on how
//! work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags mixed into derived seeds.
pub mod purpose {
    pub const PATHS: u64 = 0x5041_5448;
    pub const TRANSITIONS: u64 = 0x5452_414e;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const FIT: u64 = 0x4649_5400;
    pub const STEP: u64 = 0x5354_4550;
    pub const EVAL: u64 = 0x4556_414c;
    pub const SIMULATE: u64 = 0x5349_4d55;
    pub const SOLVE: u64 = 0x534f_4c56;
    pub const REPLICATE: u64 = 0x5245_504c;
    pub const LAB: u64 = 0x4c41_4200;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a seed together with an ordered list of counters.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut state = seed;
    let mut h = splitmix64(&mut state);
    for &p in parts {
        state ^= p.wrapping_mul(0xff51_afd7_ed55_8ccd) ^ h;
        h = splitmix64(&mut state);
    }
    h
}

/// Seed of replicate `r` in a batch of one-step transitions.
///
/// Replicate 0 uses the batch seed itself, so a single-replicate batch built
/// with `replicate_seed(s, r)` reproduces replicate `r` of a batch seeded `s`.
pub fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    if replicate == 0 {
        seed
    } else {
        derive_seed(seed, &[purpose::REPLICATE, replicate as u64])
    }
}

/// Random stream `stream` under the key derived from `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}
