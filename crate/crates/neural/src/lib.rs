//! Minimal trainable-network stack: dense tensors, a reverse-mode tape,
//! transformer and convolutional layers, Adam, checkpoints, and the
//! transformer denoiser used for parameter posterior sampling.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod embed;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod igt;
pub mod layers;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use adam::{clip_global_norm, Adam};
pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, NodeId};
pub use igt::{channel_last, Condition, DenoiserConfig, DenoiserModel};
pub use params::{Init, ParamBuilder, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
