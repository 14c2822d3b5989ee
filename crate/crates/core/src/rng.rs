//! Reproducible random streams.
//!
//! Every stochastic work item (an episode, a resource inside an episode, a
//! training replicate) owns a [`StreamKey`] derived from the master seed by
//! hashing a counter. Work can then be scheduled in any order, or in parallel,
//! without changing a single output bit.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// The generator driven by every stream.
pub type SimRng = Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identifies one independent random stream in a tree of streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(mix64(seed.wrapping_add(GOLDEN_GAMMA)))
    }

    /// Key of the `index`-th child stream.
    pub fn child(self, index: u64) -> Self {
        let counter = index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA);
        StreamKey(mix64(self.0 ^ mix64(counter)))
    }

    /// Key of a named child stream, for sub-tasks that are not indexed.
    pub fn named(self, label: &str) -> Self {
        // FNV-1a over the label bytes.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        StreamKey(mix64(self.0 ^ mix64(h)))
    }

    pub fn rng(self) -> SimRng {
        SimRng::seed_from_u64(self.0)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_stream() {
        let mut a = StreamKey::new(7).rng();
        let mut b = StreamKey::new(7).rng();
        for _ in 0..8 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn children_are_distinct() {
        let root = StreamKey::new(1);
        let keys: std::collections::HashSet<u64> = (0..10_000).map(|i| root.child(i).raw()).collect();
        assert_eq!(keys.len(), 10_000);
        assert_ne!(root.child(0), root.named("train"));
        assert_ne!(StreamKey::new(1).child(3), StreamKey::new(2).child(3));
    }
}
