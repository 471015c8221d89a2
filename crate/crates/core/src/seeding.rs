//! Deterministic seed derivation.
//!
//! Every random decision in the simulator draws from a `ChaCha8Rng` seeded
//! through [`derive_seed`], so results are bit-identical across runs and
//! independent of thread scheduling: each client/round/fold owns its own
//! stream instead of sharing a mutable RNG.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain-separation tags for the independent RNG streams.
pub mod stream {
    pub const DATASET: u64 = 0x01;
    pub const PARTITION: u64 = 0x02;
    pub const KFOLD: u64 = 0x03;
    pub const INIT: u64 = 0x04;
    pub const SELECT: u64 = 0x05;
    pub const CLIENT_TRAIN: u64 = 0x06;
    pub const CENTRAL_TRAIN: u64 = 0x07;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a sequence of stream words into a new 64-bit seed.
///
/// The absorption is order-sensitive, so `(round, client)` and
/// `(client, round)` land in different streams.
pub fn derive_seed(base: u64, words: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ 0x5851_F42D_4C95_7F2D);
    for &w in words {
        h = splitmix64(h ^ w);
    }
    h
}

/// RNG for the stream identified by `(base, words)`.
pub fn rng_for(base: u64, words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, words))
}
