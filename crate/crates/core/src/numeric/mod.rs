//! Dense tensors, reverse-mode differentiation and finite-difference checks.

pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use gradcheck::{central_difference, max_relative_error, relative_error};
pub use tape::{Tape, Var};
pub use tensor::{sigmoid, softmax, weighted_cross_entropy, weighted_cross_entropy_probs, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}
