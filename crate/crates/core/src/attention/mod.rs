//! Monotonic chunkwise attention kernels.
//!
//! Two modes share the same energies: the expected mode marginalizes over
//! every monotonic alignment and is differentiable; the hard mode thresholds
//! selection probabilities and reads frames strictly left to right.

mod alignment;
mod chunk;
mod context;
mod energy;
mod hard;

pub use alignment::{
    alignment_row, alignment_row_backward, expected_alignment, expected_alignment_backward,
    initial_alignment,
};
pub use chunk::{chunk_row, chunk_row_backward, expected_chunk_attention, expected_chunk_attention_backward, window};
pub use context::{soft_context, soft_context_backward, soft_context_row, soft_context_row_backward};
pub use energy::{
    chunk_energy, monotonic_energy, project_keys, project_keys_backward, score_row, score_row_backward,
    ChunkEnergyParams, MonotonicEnergyParams, ScoreCache, ScoreGrads, INITIAL_ENERGY_OFFSET,
};
pub use hard::{hard_decode_step, FrameSource, HardDecodeState, SourceError, SELECTION_THRESHOLD};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{sigmoid, NumericError, Real, RngStream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("energy vector v has zero norm")]
    ZeroNormV,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("selection probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("chunk width must be at least 1")]
    WindowTooSmall,
    #[error("decode step requested after the input was exhausted")]
    Finished,
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Bounds applied to selection probabilities before the alignment recurrence.
pub const PROBABILITY_FLOOR: f64 = 1e-9;

/// `σ(e + ε)` with `ε ~ N(0, 1)` drawn from `rng` in training mode, `σ(e)` otherwise.
pub fn selection_probability<T: Real>(e: T, rng: &mut RngStream, mode: Mode) -> T {
    match mode {
        Mode::Train => sigmoid(e + T::from_f64(rng.gaussian())),
        Mode::Infer => sigmoid(e),
    }
}

/// Clamps `p` into `[1e-9, 1 − 1e-9]`.
pub fn clamp_probability<T: Real>(p: T) -> T {
    let lo = T::from_f64(PROBABILITY_FLOOR);
    let hi = T::one() - lo;
    p.max(lo).min(hi)
}
