//! Seeded random streams.
//!
//! Every stream is xoshiro256** seeded through SplitMix64
//! (`Xoshiro256StarStar::seed_from_u64`). Derived values use only the raw
//! 64-bit outputs so that another implementation can reproduce them:
//!
//! * uniform in `[0, 1)`: `(next_u64 >> 11) * 2^-53`
//! * standard normal: Box–Muller on two uniforms `u1, u2`,
//!   `sqrt(-2 ln(1 - u1)) * cos(2π u2)`, one value per pair (no caching)
//! * integer below `n`: `(next_u64 as u128 * n) >> 64`
//! * shuffle: Fisher–Yates from the last index down, `j = below(i + 1)`
//!
//! Sub-streams are keyed as `splitmix64(root ^ tag)` where `tag` is a fixed
//! constant per purpose (see [`StreamTag`]).

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    Data,
    Init,
    Shuffle,
    Permutation,
    Other(u64),
}

impl StreamTag {
    fn constant(self) -> u64 {
        match self {
            StreamTag::Data => 0x6461_7461_0000_0001,
            StreamTag::Init => 0x696e_6974_0000_0002,
            StreamTag::Shuffle => 0x7368_7566_0000_0003,
            StreamTag::Permutation => 0x7065_726d_0000_0004,
            StreamTag::Other(k) => 0x6f74_6872_0000_0000 ^ k,
        }
    }
}

/// One SplitMix64 output for `state`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the sub-stream `tag` of `root`, further keyed by `index`
/// (task number, layer number, ...).
pub fn derive_seed(root: u64, tag: StreamTag, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ tag.constant()) ^ index)
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Xoshiro256StarStar,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn derived(root: u64, tag: StreamTag, index: u64) -> Self {
        Self::new(derive_seed(root, tag, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
