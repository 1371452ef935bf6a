//! Seeded dropout masks.
//!
//! A mask is a pure function of `(seed, rate, shape)`: the keep pattern is
//! regenerated on demand, so replaying a forward pass with the same masks is
//! exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub seed: u64,
    pub rate: f64,
    pub shape: Vec<usize>,
}

impl DropoutMask {
    pub fn new(seed: u64, rate: f64, shape: &[usize]) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(DropoutMask { seed, rate, shape: shape.to_vec() })
    }

    pub fn is_identity(&self) -> bool {
        self.rate == 0.0
    }

    /// Per-entry multipliers: `1/(1-rate)` where kept, exactly `0` where dropped.
    pub fn multipliers(&self) -> Vec<f64> {
        let numel: usize = self.shape.iter().product();
        if self.rate == 0.0 {
            return vec![1.0; numel];
        }
        let scale = 1.0 / (1.0 - self.rate);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..numel)
            .map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { scale })
            .collect()
    }
}

/// Seed source for every dropout site touched during one forward pass.
///
/// Sites are addressed by a path of integers; the derived seed is a hash of
/// the base seed and the path, so distinct sites never share a pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskKey {
    pub seed: u64,
    pub rate: f64,
}

impl MaskKey {
    pub fn new(seed: u64, rate: f64) -> Self {
        MaskKey { seed, rate }
    }

    pub fn child(&self, site: u64) -> MaskKey {
        MaskKey { seed: mix_seed(self.seed, site), rate: self.rate }
    }

    pub fn mask(&self, shape: &[usize]) -> Result<DropoutMask> {
        DropoutMask::new(self.seed, self.rate, shape)
    }
}

/// SplitMix64 finaliser over `a ⊕ rot(b)`.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(32) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
