//! Dense tensors and a small reverse-mode tape, just enough for the SMLM
//! network.

pub mod ops;
pub mod tape;
mod tensor;

pub use ops::{affine, cross_entropy, gelu, layer_norm, log_sum_exp, matmul, softmax};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
}
