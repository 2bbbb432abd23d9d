//! Dense tensor values, shared math kernels, and reverse-mode differentiation.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::{grad_check, GradReport};
pub use graph::{Gradients, Graph, Var};
pub use kernels::{cosine_sim, l2_norm, normalize, softmax};
pub use tensor::Tensor;
