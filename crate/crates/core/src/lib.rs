//! Single-image rain removal with pairwise self-attention, scale aggregation and
//! self-calibrated convolution, built on a small CPU tensor library with
//! reverse-mode differentiation.

pub mod data;
pub mod error;
pub mod gradcheck_suite;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Gradients, Graph, OpKind, ParamId, ParamStore, Shape, Tensor, Var};
