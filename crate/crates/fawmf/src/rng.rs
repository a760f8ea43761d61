//! Deterministic randomness.
//!
//! Every random choice in the crate flows through a ChaCha8 stream seeded
//! via `SeedableRng::seed_from_u64`, and the derived draws below are written
//! out explicitly so results are bit-reproducible across platforms and
//! dependency upgrades:
//!
//! * integers in a range: Lemire multiply-shift reduction of one 64-bit
//!   draw (bias below `bound / 2^64`, irrelevant at the sizes used here);
//! * unit floats: top 53 bits of one 64-bit draw;
//! * shuffles: Fisher-Yates driven by the bounded draw;
//! * categorical draws: inverse-CDF over a prefix-sum table.
//!
//! Subsystems never share a stream: [`fork`] derives an independent seed
//! from the root seed and a label (and optionally an index) so that, e.g.,
//! fold assignment does not perturb parameter initialization.

use rand_chacha::rand_core::{RngCore, SeedableRng};
pub use rand_chacha::ChaCha8Rng;

/// New generator for the given seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive a subsystem seed from a root seed and a label.
pub fn fork(root: u64, label: &str) -> u64 {
    // FNV-1a over the label, mixed with the root through splitmix64.
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for byte in label.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(root ^ h)
}

/// Indexed variant of [`fork`] for per-epoch or per-fold streams.
pub fn fork_indexed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(fork(root, label) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform integer in `[0, bound)`.
#[inline]
pub fn bounded(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    ((u128::from(rng.next_u64()) * u128::from(bound)) >> 64) as u64
}

/// Uniform float in `[0, 1)` with 53 significant bits.
#[inline]
pub fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform float in `[lo, hi)`.
#[inline]
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = bounded(rng, (i + 1) as u64) as usize;
        items.swap(i, j);
    }
}

/// Inverse-CDF sampler over nonnegative weights.
pub struct Categorical {
    cumulative: Vec<f64>,
    total: f64,
}

impl Categorical {
    /// Build from weights. Returns `None` if all weights are zero.
    pub fn new(weights: impl Iterator<Item = f64>) -> Option<Self> {
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        for w in weights {
            debug_assert!(w >= 0.0 && w.is_finite());
            total += w;
            cumulative.push(total);
        }
        if total <= 0.0 {
            return None;
        }
        Some(Categorical { cumulative, total })
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        let point = unit(rng) * self.total;
        self.cumulative.partition_point(|&c| c <= point)
    }
}
