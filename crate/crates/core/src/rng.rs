//! Seeded ChaCha8 streams. Every consumer of randomness owns a generator
//! identified by `(seed, stream)`, so chains advance independently and runs
//! replay bit-identically from a checkpointed descriptor.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

/// Stream tags for the generators owned by the training and pruning drivers.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const MINIBATCH: u64 = 2;
    pub const UPDATE: u64 = 3;
    pub const TRAIN_POOL: u64 = 4;
    pub const PRUNE_POOL: u64 = 5;
    pub const CLAMPED_POOL: u64 = 6;
    pub const BINARIZE: u64 = 7;
    pub const AIS: u64 = 8;
    pub const EVAL: u64 = 9;
}

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A fresh 64-bit seed derived from `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    stream_rng(seed, stream).next_u64()
}

/// Serializable position of a [`StreamRng`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngDescriptor {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Serialized as a decimal string, since JSON numbers stop at 64 bits.
    #[serde(with = "decimal_u128")]
    pub word_pos: u128,
}

mod decimal_u128 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(x)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

impl RngDescriptor {
    pub fn capture(rng: &StreamRng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
