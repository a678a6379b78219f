//! Named substreams derived from a single global seed.
//!
//! Every random choice in the pipeline takes its generator from
//! [`stream`], keyed by a stage name and optionally an index, so that two
//! stages never share a sequence and re-running with the same seed replays
//! everything.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a stage name.
pub fn derive(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the parent seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(seed ^ splitmix(h))
}

/// Derives the seed of the `index`-th item of a named family (cycles, restarts, learners).
pub fn derive_indexed(seed: u64, name: &str, index: u64) -> u64 {
    splitmix(derive(seed, name) ^ splitmix(index.wrapping_add(1)))
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive(seed, name))
}

pub fn stream_indexed(seed: u64, name: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_indexed(seed, name, index))
}
