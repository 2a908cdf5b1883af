//! Dense `f64` tensors and a tape-based reverse-mode differentiator.
//!
//! Broadcasting is restricted to two cases: equal shapes, and a rank-0
//! scalar combined with any tensor. Everything the models need (including
//! bias rows, which are added via a ones-column matmul) fits inside that.

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, LossKind, Target, Var};
pub use tensor::Tensor;
