//! Dense tensors, a reverse-mode graph, and first-order optimizers.

pub mod check;
mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, NodeId, LOG_FLOOR};
pub use optim::{sgd_step, AdamConfig, AdamState};
pub use params::{Grads, ParamSet};
pub use tensor::Tensor;
