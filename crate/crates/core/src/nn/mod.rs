//! Minimal dense-network engine: tensors, MLPs, reverse-mode
//! differentiation and an adaptive-moment optimizer.

mod graph;
mod mlp;
mod optim;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use mlp::{Activation, BoundMlp, Mlp};
pub use optim::Adam;
pub use tensor::Tensor;

pub(crate) use graph::softplus;
