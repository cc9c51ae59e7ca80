pub mod bench;
pub mod corpus;
pub mod depth_map;
pub mod encoder;
pub mod error;
pub mod mi;
pub mod nn;
pub mod recon;
pub mod synth;

pub use error::{Error, Result};
