//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod check;
mod tape;
mod tensor;

pub use check::{grad_check, GradCheckReport};
pub use tape::{log_softmax_slice, softmax_slice, Tape, Var};
pub use tensor::Tensor;
