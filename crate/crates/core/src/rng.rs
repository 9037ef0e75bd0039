//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every random consumer (population generation, one Monte Carlo replicate,
//! one bootstrap replicate inside it) gets its own ChaCha8 stream whose seed is
//! a pure function of the master seed and a path of integer keys. Work can then
//! be scheduled on any number of threads without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Position in the tree of derived random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamSeed(u64);

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamSeed {
    pub fn new(master: u64) -> Self {
        StreamSeed(splitmix64(master))
    }

    /// Child stream keyed by `key`. Distinct keys give unrelated streams.
    pub fn child(self, key: u64) -> Self {
        StreamSeed(splitmix64(self.0 ^ splitmix64(key.wrapping_mul(GOLDEN).wrapping_add(1))))
    }

    /// Child stream keyed by a short label, e.g. `"population"`.
    pub fn named(self, label: &str) -> Self {
        let key = label
            .bytes()
            .fold(0xCBF2_9CE4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3));
        self.child(key)
    }

    pub fn rng(self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn value(self) -> u64 {
        self.0
    }
}
