//! Tensors, shared forward kernels, a reverse-mode tape, and a
//! finite-difference gradient checker.
//!
//! The same kernel functions back both the tape and plain inference, so
//! recording a computation never changes its floating-point result.

mod check;
pub mod eval;
mod tape;
mod tensor;

pub use check::{finite_diff_check, kink_skip_mask, FiniteDiffReport};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{Shape, Tensor};
