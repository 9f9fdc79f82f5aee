//! Counter-based random streams keyed by tree paths.
//!
//! Every node of a realization owns a 64-bit key derived from the master seed
//! and its digit path. A [`StreamRng`] seeded with that key yields
//! `mix(key + k·γ)` for `k = 1, 2, …`, so any subtree can be regenerated in
//! isolation and results never depend on traversal order or thread count.

use rand::RngCore;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key of the root node for a master seed.
#[inline]
pub fn root_key(seed: u64) -> u64 {
    mix64(seed ^ 0x5bd1_e995_a3c4_f0d7)
}

/// Key of child `i` of the node with key `parent`.
#[inline]
pub fn child_key(parent: u64, i: u32) -> u64 {
    mix64(parent.wrapping_add((u64::from(i) + 1).wrapping_mul(GOLDEN_GAMMA)) ^ 0x2545_f491_4f6c_dd1d)
}

/// Key of the node at `path`, folding [`child_key`] from the root.
pub fn path_key(seed: u64, path: &[u32]) -> u64 {
    path.iter().fold(root_key(seed), |k, &d| child_key(k, d))
}

/// Independent substream `index` of a master seed, used for Monte Carlo
/// chunks and per-tree seeds.
#[inline]
pub fn substream(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ 0x6a09_e667_f3bc_c909).wrapping_add(index.wrapping_mul(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }
}

impl RngCore for StreamRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}
