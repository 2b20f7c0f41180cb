//! Tensor container, layer kernels and network assembly.

pub mod gradcheck;
pub mod layers;
mod network;
mod tensor;

use thiserror::Error;

pub use network::{
    image_tensor, one_hot, ForwardCache, Gradients, LayerParams, LayerSpec, Mode, NetworkSpec,
    Parameters, KERNEL, NUM_CLASSES,
};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("forward cache does not belong to this network or was produced without training mode")]
    StaleCache,
    #[error("target is not a one-hot vector over the output classes")]
    MalformedOneHot,
}
