//! Time and frequency masking of feature matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{Real, RngStream, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("time_fraction_cap must lie in [0, 1], got {0}")]
    Cap(f64),
    #[error("features must be a non-empty matrix, got dims {0:?}")]
    Shape(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecAugmentPolicy {
    /// Exclusive upper bound on a time block's length, in frames.
    pub max_time: usize,
    /// Exclusive upper bound on a frequency band's width, in bins.
    pub max_freq: usize,
    pub time_masks: usize,
    pub freq_masks: usize,
    /// Time blocks are also kept below this fraction of the utterance length.
    pub time_fraction_cap: f64,
}

impl Default for SpecAugmentPolicy {
    fn default() -> Self {
        Self { max_time: 40, max_freq: 27, time_masks: 1, freq_masks: 1, time_fraction_cap: 0.2 }
    }
}

impl SpecAugmentPolicy {
    /// A policy that never masks anything.
    pub fn off() -> Self {
        Self { max_time: 0, max_freq: 0, time_masks: 0, freq_masks: 0, time_fraction_cap: 0.0 }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.time_fraction_cap) {
            return Err(AugmentError::Cap(self.time_fraction_cap));
        }
        Ok(())
    }

    /// Exclusive bound on time block length for an utterance of `frames` frames.
    pub fn time_bound(&self, frames: usize) -> usize {
        let cap = (self.time_fraction_cap * frames as f64).floor() as usize;
        self.max_time.min(cap)
    }

    pub fn freq_bound(&self, bins: usize) -> usize {
        self.max_freq.min(bins)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskAxis {
    Time,
    Freq,
}

/// A zeroed block `[start, start + len)` along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MaskBlock {
    pub axis: MaskAxis,
    pub start: usize,
    pub len: usize,
}

impl std::fmt::Display for MaskBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let axis = match self.axis {
            MaskAxis::Time => "time",
            MaskAxis::Freq => "freq",
        };
        write!(f, "{axis} [{}, {})", self.start, self.start + self.len)
    }
}

fn check<T: Real>(feats: &Tensor<T>) -> Result<(), AugmentError> {
    if feats.rank() != 2 || feats.is_empty() {
        return Err(AugmentError::Shape(feats.dims().to_vec()));
    }
    Ok(())
}

/// Draws a block length below `bound`, then a start so the block fits in `extent`.
fn draw_block(bound: usize, extent: usize, axis: MaskAxis, rng: &mut RngStream) -> MaskBlock {
    let len = rng.below(bound);
    let start = rng.below(extent - len);
    MaskBlock { axis, start, len }
}

/// Zeroes `policy.time_masks` random blocks of rows in place.
pub fn time_mask<T: Real>(
    feats: &mut Tensor<T>,
    policy: &SpecAugmentPolicy,
    rng: &mut RngStream,
) -> Result<Vec<MaskBlock>, AugmentError> {
    check(feats)?;
    policy.validate()?;
    let tau = feats.rows();
    let bound = policy.time_bound(tau);
    let mut blocks = Vec::with_capacity(policy.time_masks);
    for _ in 0..policy.time_masks {
        let b = draw_block(bound, tau, MaskAxis::Time, rng);
        for r in b.start..b.start + b.len {
            feats.row_mut(r).fill(T::zero());
        }
        blocks.push(b);
    }
    Ok(blocks)
}

/// Zeroes `policy.freq_masks` random bands of columns in place.
pub fn freq_mask<T: Real>(
    feats: &mut Tensor<T>,
    policy: &SpecAugmentPolicy,
    rng: &mut RngStream,
) -> Result<Vec<MaskBlock>, AugmentError> {
    check(feats)?;
    policy.validate()?;
    let bins = feats.cols();
    let bound = policy.freq_bound(bins);
    let mut blocks = Vec::with_capacity(policy.freq_masks);
    for _ in 0..policy.freq_masks {
        let b = draw_block(bound, bins, MaskAxis::Freq, rng);
        for r in 0..feats.rows() {
            feats.row_mut(r)[b.start..b.start + b.len].fill(T::zero());
        }
        blocks.push(b);
    }
    Ok(blocks)
}

/// Time masks first, then frequency masks. Returns the masked copy and the
/// blocks that were drawn.
pub fn apply_specaugment<T: Real>(
    feats: &Tensor<T>,
    policy: &SpecAugmentPolicy,
    rng: &mut RngStream,
) -> Result<(Tensor<T>, Vec<MaskBlock>), AugmentError> {
    let mut out = feats.clone();
    let mut blocks = time_mask(&mut out, policy, rng)?;
    blocks.extend(freq_mask(&mut out, policy, rng)?);
    Ok((out, blocks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(t: usize, f: usize) -> Tensor<f32> {
        Tensor::from_fn(&[t, f], |i| 1.0 + i as f32)
    }

    #[test]
    fn zero_policy_is_identity() {
        let x = feats(30, 8);
        let (y, blocks) = apply_specaugment(&x, &SpecAugmentPolicy::off(), &mut RngStream::new(1, 2)).unwrap();
        assert_eq!(x, y);
        assert!(blocks.is_empty());
        let p = SpecAugmentPolicy { max_time: 0, max_freq: 0, ..Default::default() };
        let (y, blocks) = apply_specaugment(&x, &p, &mut RngStream::new(1, 2)).unwrap();
        assert_eq!(x, y);
        assert!(blocks.iter().all(|b| b.len == 0));
    }

    #[test]
    fn time_blocks_respect_the_fraction_cap() {
        let p = SpecAugmentPolicy::default();
        assert_eq!(p.time_bound(100), 20);
        assert_eq!(p.time_bound(1000), 40);
        for seed in 0..500 {
            let mut x = feats(100, 4);
            for b in time_mask(&mut x, &p, &mut RngStream::new(seed, 0)).unwrap() {
                assert!(b.len < 20 && b.start + b.len <= 100);
            }
        }
    }

    #[test]
    fn freq_band_narrower_than_bound() {
        let p = SpecAugmentPolicy::default();
        for seed in 0..500 {
            let mut x = feats(5, 80);
            for b in freq_mask(&mut x, &p, &mut RngStream::new(seed, 9)).unwrap() {
                assert!(b.len < 27 && b.start + b.len <= 80);
            }
        }
    }

    #[test]
    fn masked_cells_are_zero_and_others_untouched() {
        let x = feats(50, 10);
        let p = SpecAugmentPolicy { time_masks: 2, freq_masks: 2, ..Default::default() };
        let (y, blocks) = apply_specaugment(&x, &p, &mut RngStream::new(7, 7)).unwrap();
        for r in 0..50 {
            for c in 0..10 {
                let masked = blocks.iter().any(|b| match b.axis {
                    MaskAxis::Time => (b.start..b.start + b.len).contains(&r),
                    MaskAxis::Freq => (b.start..b.start + b.len).contains(&c),
                });
                let v = y.get2(r, c);
                if masked {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v.to_bits(), x.get2(r, c).to_bits());
                }
            }
        }
    }

    #[test]
    fn masking_zero_band_is_idempotent() {
        let mut x = feats(6, 6);
        for r in 0..6 {
            x.row_mut(r).fill(0.0);
        }
        let before = x.clone();
        freq_mask(&mut x, &SpecAugmentPolicy::default(), &mut RngStream::new(3, 3)).unwrap();
        assert_eq!(x, before);
    }

    #[test]
    fn bad_cap_rejected() {
        let p = SpecAugmentPolicy { time_fraction_cap: 1.5, ..Default::default() };
        assert!(p.validate().is_err());
        assert!(apply_specaugment(&feats(3, 3), &p, &mut RngStream::new(0, 0)).is_err());
    }
}
