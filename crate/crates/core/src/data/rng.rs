//! Seed derivation. Every random stream is a ChaCha8 generator keyed by a
//! hash of the run seed and the stream's coordinates, so a stream can be
//! rebuilt without replaying any other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose of a derived stream; keeps streams with equal coordinates apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Batch = 2,
    Epoch = 3,
    Synth = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// hash(seed, stream, a, b).
pub fn derive_seed(seed: u64, stream: Stream, a: u64, b: u64) -> u64 {
    [stream as u64, a, b]
        .into_iter()
        .fold(splitmix64(seed), |h, x| splitmix64(h ^ x))
}

pub fn stream_rng(seed: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, a, b))
}
