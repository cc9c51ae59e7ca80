//! Depth-adaptive Transformer encoder and its task heads.

mod config;
mod masking;
mod model;

pub use config::EncoderConfig;
pub use masking::{mask_one, mask_tokens, MaskedSentence};
pub use model::{
    argmax, read_meta, task_loss, Classified, ComputeCounts, HiddenStates, Model, ModelKind,
};
