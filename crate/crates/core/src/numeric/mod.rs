//! Tensors, deterministic kernels, reverse-mode differentiation and
//! precision emulation.

mod graph;
mod kernels;
mod precision;
mod tensor;

pub use graph::{Gradients, Graph, Var, ZERO_INDEX};
pub use kernels::{cast_precision, finite_difference_grad, matmul, reduce_stats, softmax_lastdim};
pub use precision::{f16_bits_to_f64, f64_to_f16_bits, round_f16, Precision, F16_MAX};
pub use tensor::Tensor;
