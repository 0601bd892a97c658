//! Seeded substreams.
//!
//! Every random draw in the toolkit comes from a ChaCha8 generator keyed by
//! the master seed, with the stream id derived from a path such as
//! `[tag, snippet, frame]`. Two draws with different paths never share state,
//! so evaluation order (and thread count) cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags keeping unrelated consumers of the same snippet apart.
pub mod tag {
    pub const FAULT: u64 = 0x6661_756c_74;
    pub const SCENE: u64 = 0x7363_656e_65;
    pub const NOISE: u64 = 0x6e6f_6973_65;
    pub const DETECT: u64 = 0x6465_7465_6374;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the substream identified by `path` under `seed`.
pub fn substream(seed: u64, path: &[u64]) -> SimRng {
    let stream = path
        .iter()
        .fold(0x5EED_0F_5EEDu64, |acc, &p| splitmix64(acc ^ splitmix64(p)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
