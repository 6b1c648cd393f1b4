//! Minimal reverse-mode differentiation over dense 2-D tensors.
//!
//! The primitive set covers everything the learnable parts of the pipeline
//! need, including a differentiable SPD linear solve whose backward pass uses
//! the implicit-function identity rather than unrolling a factorization.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{cosine_rows, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tensor::dot;

#[cfg(test)]
mod tests;
