//! Seed derivation. Every random stream in a run is keyed by the global seed
//! plus a path of integers (stream tag, round, participant, epoch), so any
//! piece of work can be re-executed in isolation and reproduce its output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for the top-level consumers of the global seed.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const TRAIN_DATA: u64 = 4;
    pub const TEST_DATA: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
