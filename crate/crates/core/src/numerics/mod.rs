//! Dense tensors, reverse-mode gradients, Adam and MLPs.

pub mod gradcheck;
pub mod graph;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{log_sum_exp, sigmoid, softmax, Activation, Gradients, Graph, Var};
pub use mlp::{mlp_apply, MlpSpec};
pub use optim::{optimizer_step, Adam};
pub use params::{forward_and_grad, ParamSet, ParamVars};
pub use tensor::Tensor;
