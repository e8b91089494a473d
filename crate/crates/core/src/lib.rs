// `!(x > 0.0)` style checks deliberately treat NaN as invalid
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod networks;
pub mod render;
pub mod service;
pub mod training;

pub use autodiff::{Tape, Tensor, TensorError, Var};
pub use geometry::Mesh;
