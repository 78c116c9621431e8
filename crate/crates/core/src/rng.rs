//! Seeded randomness with independent per-entity substreams.
//!
//! Every random consumer in a run draws from its own ChaCha8 stream keyed by
//! `(run seed, label, index)`. Adding a client or a relay therefore never shifts
//! the draws seen by any other entity.

use std::hash::Hasher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siphasher::sip::SipHasher13;

pub type SimRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for entity `index` of family `label`.
    pub fn stream(&self, label: &str, index: u64) -> SimRng {
        let mut h = SipHasher13::new_with_keys(self.seed, 0x746f_7262_6974);
        h.write(label.as_bytes());
        let family = h.finish();
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&family.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }

    /// Child tree, e.g. one per sweep grid point.
    pub fn child(&self, label: &str, index: u64) -> SeedTree {
        use rand::RngCore;
        SeedTree::new(self.stream(label, index).next_u64())
    }
}

/// Convenience for standalone operations that just need a seeded generator.
pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
