//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Leaves flagged with
//! `requires_grad` receive gradients on [`Tape::backward`]; everything else is
//! treated as a constant and its backward work is skipped.

mod adam;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use tape::{Reduction, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
