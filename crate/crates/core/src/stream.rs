//! Seed derivation for reproducible parallel work.
//!
//! Every random quantity in the crate is drawn from a [`ChaCha8Rng`] whose seed
//! is derived from a root seed by a fixed path of `(tag, index)` steps. A child
//! seed is `mix(parent ^ mix(tag) ^ mix(index + 1))` using the SplitMix64
//! finalizer, so the stream assigned to replicate `i` depends only on the root
//! seed and `i`, never on which thread ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl SeedStream {
    pub fn new(root: u64) -> Self {
        Self(root)
    }

    pub fn seed(&self) -> u64 {
        self.0
    }

    /// Independent child stream for `(tag, index)`.
    pub fn child(&self, tag: &str, index: u64) -> Self {
        Self(mix(self.0
            ^ mix(tag_hash(tag))
            ^ mix(index.wrapping_add(1))))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
