//! Counter-based seed derivation.
//!
//! Every random quantity is addressed by `(seed, stream, index)`, so results
//! never depend on evaluation order or on how work is split across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_PROCESS: u64 = 0x5052_4f43;
pub const STREAM_ALPHA: u64 = 0x414c_5048;
pub const STREAM_BETA: u64 = 0x4245_5441;
pub const STREAM_SHOT: u64 = 0x5348_4f54;
pub const STREAM_REALIZATION: u64 = 0x5245_414c;
pub const STREAM_MISC: u64 = 0x4d49_5343;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `(seed, stream, index)`.
pub fn child_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

/// Maps a signed index onto `u64` without collisions.
pub fn zigzag(i: i64) -> u64 {
    ((i << 1) ^ (i >> 63)) as u64
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(seed, stream, index))
}
