//! Dense tensors, reverse-mode autodiff, parameters, Adam, checkpoints.

mod checkpoint;
mod graph;
mod params;
mod real;
mod tensor;

pub use checkpoint::{checkpoint_dtype, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use graph::{Gradients, Graph, Var};
pub use params::{AdamConfig, AdamReport, ParamId, ParamStore};
pub use real::{DType, Real};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use graph::{log_sum_exp, softmax_in_place};
