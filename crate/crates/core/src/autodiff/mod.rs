//! Dense `f32` tensors with define-by-run reverse-mode differentiation.
//!
//! Binary elementwise ops broadcast one-sidedly: shapes are right-aligned,
//! aligned extents must match or be 1, and the output shape must equal one of
//! the operand shapes. Anything else is rejected rather than guessed.

pub mod archive;
pub mod gradcheck;
mod kernels;
mod sparse;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_indices, GradCheckConfig, GradCheckReport};
pub use sparse::SparseRows;
pub use tape::{CustomOp, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("ambiguous broadcast between {lhs:?} and {rhs:?}: both operands would grow")]
    AmbiguousBroadcast { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    BadAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("slice [{start}, {end}) on axis {axis} invalid for shape {shape:?}")]
    BadSlice {
        axis: usize,
        start: usize,
        end: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown op kind `{0}`")]
    UnknownOp(String),
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("archive: {0}")]
    Archive(String),
}
