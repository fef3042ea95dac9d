//! Seeded random streams.
//!
//! Every stochastic step in the crate draws from a stream derived from one
//! master seed plus a list of tags (experiment, user, trial, ...). Deriving is
//! a pure function, so results never depend on the order in which work items
//! are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for the top-level consumers of randomness.
pub mod tag {
    pub const INIT_RECOMMENDER: u64 = 0x5245_4331;
    pub const INIT_COMPRESSOR: u64 = 0x434f_4d31;
    pub const SHUFFLE_RECOMMENDER: u64 = 0x5348_5231;
    pub const SHUFFLE_COMPRESSOR: u64 = 0x5348_4331;
    pub const EXP1: u64 = 1;
    pub const EXP2: u64 = 2;
    pub const EXP3: u64 = 3;
    pub const EXP4: u64 = 4;
    pub const CLONE: u64 = 0x434c_4f4e;
    pub const SYNTH: u64 = 0x5359_4e54;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Master seed from which all streams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rng {
    master: u64,
}

impl Rng {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Seed for the stream identified by `tags`.
    pub fn stream_seed(&self, tags: &[u64]) -> u64 {
        tags.iter().fold(splitmix64(self.master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
    }

    pub fn stream(&self, tags: &[u64]) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.stream_seed(tags))
    }

    /// A child seed, for components that own their own `Rng`.
    pub fn child(&self, tags: &[u64]) -> Rng {
        Rng::new(self.stream_seed(tags))
    }
}
