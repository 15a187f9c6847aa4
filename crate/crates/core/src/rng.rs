//! Reproducible random streams.
//!
//! Every stochastic draw in the engine goes through an [`RngStream`]: a master
//! seed plus a stream id. The pair fully determines the draw sequence, so a
//! sample's spike trains do not depend on which worker processes it or in
//! which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Role tags used to derive independent sub-streams from one sample stream.
pub mod role {
    pub const INPUT: u64 = 1;
    pub const LABEL: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const WEIGHTS: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const TRAIN: u64 = 7;
    pub const SUBSAMPLE: u64 = 8;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Derive a child stream. Distinct `(stream_id, tag)` pairs map to
    /// distinct ids with overwhelming probability.
    pub fn sub(&self, tag: u64) -> Self {
        Self {
            master_seed: self.master_seed,
            stream_id: mix(self.stream_id ^ mix(tag.wrapping_add(0x9E37_79B9_7F4A_7C15))),
        }
    }

    /// Derive a child stream from several indices at once (e.g. epoch, sample).
    pub fn sub_path(&self, tags: &[u64]) -> Self {
        tags.iter().fold(*self, |s, &t| s.sub(t))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
