//! Dense `f64` tensors with a tape-based reverse-mode autodiff.
//!
//! The tape is rebuilt for every forward pass. Parameters enter as leaves
//! with `requires_grad` set; after [`Tape::backward`] their gradients can be
//! read back with [`Tape::grad`].

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutogradError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} holds {} elements but data has {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("invalid shape {shape:?}: every dimension must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("expected a one-element tensor, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: needs at least one operand")]
    EmptyOperands { op: &'static str },
    #[error("{op}: domain error, {detail}")]
    Domain { op: &'static str, detail: String },
}
