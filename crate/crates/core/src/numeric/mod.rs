//! Dense tensors, scalar activations and a reproducible random source.
//!
//! Everything above this module is generic over [`Real`], so the same code
//! path runs in 32-bit for training and in 64-bit for gradient checks.

mod kernels;
mod ops;
mod params;
mod rng;
mod tensor;

pub use kernels::{add_into, axpy, dot, matvec_acc, matvec_into, matvec_t_acc, outer_acc};
pub use ops::{
    add, add_backward, concat, concat_backward, matmul, matmul_backward, scale, scale_backward,
    sigmoid, sigmoid_grad_from_output, slice, slice_backward, softmax, softmax_backward,
    softmax_in_place, tanh, tanh_grad_from_output,
};
pub use params::{uniform_tensor, Parameters};
pub use rng::{stream_id, RngStream};
pub use tensor::{Precision, Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("tensor rank {0} exceeds the supported maximum of 3")]
    Rank(usize),
    #[error("data length {data} does not match dims {dims:?}")]
    Length { dims: Vec<usize>, data: usize },
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("empty axis")]
    EmptyAxis,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}
