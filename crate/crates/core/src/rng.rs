//! Seeded RNG streams.
//!
//! Every random draw in a run comes from a stream keyed by
//! `(seed, purpose, round, client)`, so the outcome of a client's local
//! training never depends on which worker thread ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Data = 2,
    Partition = 3,
    Sampling = 4,
    LocalTrain = 5,
    ServerTrain = 6,
    TestData = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes the key components into a single 64-bit stream seed.
pub fn stream_seed(seed: u64, purpose: Purpose, round: u64, client: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ purpose as u64);
    h = splitmix64(h ^ round);
    splitmix64(h ^ client)
}

pub fn stream(seed: u64, purpose: Purpose, round: u64, client: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, purpose, round, client))
}
