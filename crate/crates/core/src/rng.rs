//! Seeded generators.
//!
//! Every random decision in the crate draws from a ChaCha8 stream derived
//! from a user seed and a fixed stream id, so runs are reproducible and
//! independent consumers never share state.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

pub mod stream {
    pub const DATA: u64 = 1;
    pub const INIT_LEAF: u64 = 2;
    pub const INIT_PROB: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const POSTERIOR: u64 = 6;
    pub const KMEANS: u64 = 7;
    pub const SAMPLER: u64 = 8;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a seed with an index (splitmix64 finaliser) to get a child seed.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
