//! Dense tensors and reverse-mode differentiation for the network's op set.
//!
//! Everything is 64-bit: the frame-identity and gradient tolerances the
//! test suites pin down are not reachable in single precision.

mod ops;
mod tape;
mod tensor;

pub use ops::{conv2d, conv2d_transpose, BnMode};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
