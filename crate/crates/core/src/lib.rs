//! Hand-sign digit recognition with Bangla speech output.
//!
//! The crate covers the whole offline pipeline: decoding and preprocessing
//! raw frames, a small convolutional network with hand-written
//! backpropagation, RMSProp training, evaluation metrics, model
//! persistence and the digit → Bangla text → audio stage.

pub mod augment;
pub mod dataset;
pub mod imaging;
pub mod metrics;
pub mod model_io;
pub mod nn;
pub mod speech;
pub mod synthetic;
pub mod train;
