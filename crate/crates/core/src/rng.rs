//! Seed derivation for independent random streams.
//!
//! Every random decision in a run draws from a stream keyed by
//! `(master seed, purpose, client, round)`. Streams never share state, so the
//! order in which clients are processed (serially or on a thread pool) cannot
//! change any result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Partition = 1,
    Proxy = 2,
    ModelInit = 3,
    KMeans = 4,
    Auxiliary = 5,
    RoundIndices = 6,
    Supervised = 7,
    Distill = 8,
    Synthetic = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the stream key into a single 64-bit seed.
pub fn derive_seed(master: u64, purpose: Purpose, client: u64, round: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ purpose as u64);
    h = splitmix64(h ^ client);
    splitmix64(h ^ round)
}

pub fn stream(master: u64, purpose: Purpose, client: u64, round: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, purpose, client, round))
}

pub fn seeded(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
