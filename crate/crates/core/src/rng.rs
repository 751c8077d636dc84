//! Seeded random streams.
//!
//! All randomness flows from one user seed. Each consumer asks for its own
//! named substream so that adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named substreams of the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    DataShuffle,
    Init,
    Sampling,
    Synthetic,
    Split,
    Probe,
    GradCheck,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::DataShuffle => 1,
            Stream::Init => 2,
            Stream::Sampling => 3,
            Stream::Synthetic => 4,
            Stream::Split => 5,
            Stream::Probe => 6,
            Stream::GradCheck => 7,
        }
    }
}

/// Returns the generator for `stream` under `seed`.
pub fn substream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Derives a child seed from a parent and a list of indices (splitmix64 mixing).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
