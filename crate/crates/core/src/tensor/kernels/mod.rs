//! Forward and adjoint kernels on raw tensors. The gradient tape in
//! [`Graph`](super::Graph) dispatches to these; they are also usable directly
//! for inference-only code paths and as building blocks in tests.

pub mod activation;
pub mod attention;
pub mod conv;
pub mod norm;
pub mod pool;
pub mod shape_ops;
pub mod ssim;
pub mod upsample;
