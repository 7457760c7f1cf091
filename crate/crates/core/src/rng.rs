//! Seeded random streams.
//!
//! Every consumer of randomness owns a ChaCha stream derived from
//! `(seed, stream id)`, so two components sharing a seed never share draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids used by the library.
pub mod streams {
    pub const BATCH: u64 = 1;
    pub const TIME: u64 = 2;
    pub const STREAM_NOISE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const TRAIN_DATA: u64 = 10;
    pub const TEST_DATA: u64 = 11;
    pub const SOURCE_TRAIN: u64 = 12;
    pub const SOURCE_TEST: u64 = 13;
    pub const GENERATE: u64 = 20;
}

pub fn stream(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
