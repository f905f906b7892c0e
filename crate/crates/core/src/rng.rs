//! Seed plumbing. Every random stream in a run is derived from the run seed
//! plus a stream tag and an index so that streams stay independent of the
//! order in which they are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags keep derived seeds for different purposes apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Noise = 2,
    TestSet = 3,
    LocalTrain = 4,
    TieBreak = 5,
    RandomPolicy = 6,
    Shapley = 7,
    ModelInit = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: Stream, index: u64) -> u64 {
    let mut h = splitmix64(base);
    h = splitmix64(h ^ (stream as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    splitmix64(h ^ index.wrapping_mul(0x9FB2_1C65_1E98_DF25))
}

pub fn rng_for(base: u64, stream: Stream, index: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, index))
}

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
