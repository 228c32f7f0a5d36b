//! Deterministic, splittable random streams.
//!
//! Every random draw in the simulator comes from a [`ChaCha8Rng`] whose seed is
//! a hash of the master seed and a path of labels (sweep index, trial index,
//! purpose, station ids ...). Two different paths give statistically
//! independent streams, and a stream never depends on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream labels for the different consumers of randomness.
pub mod label {
    pub const OBSTACLES: u64 = 0x0b57;
    pub const TARGET: u64 = 0x7a76;
    pub const USER: u64 = 0x05e7;
    pub const CHANNEL: u64 = 0xc4a1;
    pub const GRID: u64 = 0x6e1d;
    pub const NOISE: u64 = 0x4015;
    pub const CLOCK: u64 = 0xc10c;
    pub const BEAM: u64 = 0xbea3;
    pub const BOOTSTRAP: u64 = 0xb007;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a seed and a label path into a 64-bit stream key.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Random stream for `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> Stream {
    let key = derive(seed, path);
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(key.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
