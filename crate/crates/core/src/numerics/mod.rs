//! Dense `f64` arrays, reverse-mode differentiation and attention primitives.

pub mod gradcheck;
mod mask;
mod tape;
mod tensor;

pub use mask::{AttentionMask, MASKED};
pub use tape::{bce_term, sigmoid, Tape, Var, BCE_EPS};
pub use tensor::Tensor;
