//! Reproducible random streams.
//!
//! A master seed selects a ChaCha8 key; every replication runs on its own
//! ChaCha stream (the 64-bit stream id is the replication index), so results
//! do not depend on the order or thread on which replications execute.
//! Experiments that need independent families of replications (one per
//! system size, say) derive a child seed with [`SeedStreams::child`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Independent family keyed by `tag`.
    pub fn child(&self, tag: u64) -> Self {
        Self {
            master: splitmix64(self.master ^ splitmix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    pub fn replication(&self, index: u64) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(index);
        rng
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
