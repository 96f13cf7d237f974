//! Minimal CPU tensor engine with reverse-mode differentiation: convolutions
//! via im2col + GEMM, normalization, pooling and resampling on NCHW tensors.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod scalar;
mod tensor;

pub use graph::{BatchStats, CustomOp, Grads, Graph, Var};
pub use kernels::ConvGeom;
pub use scalar::Scalar;
pub use tensor::Tensor;
