//! Reverse-mode automatic differentiation over a fixed op set, plus the
//! optimizer and learning-rate schedule used for pretraining.
//!
//! Everything runs in 64-bit floats so analytic gradients can be checked
//! against central finite differences at tight tolerances.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_subset, GradCheckReport};
pub use optim::{adamw_step, clip_grad_norm, cosine_warmup_lr, AdamHyper, MomentState};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape {shape:?} holds {expected} values, got {got}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("parameter/gradient shape mismatch: {param:?} vs {grad:?}")]
    GradShape { param: Vec<usize>, grad: Vec<usize> },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("{0}")]
    Invalid(String),
}

#[cfg(test)]
mod tests;
