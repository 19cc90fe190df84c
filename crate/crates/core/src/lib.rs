//! Decoupled knowledge distillation for spectrogram emotion classification.

pub mod autodiff;
pub mod data;
pub mod distill;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod model;
mod par;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use par::set_threads;
pub use tensor::Tensor;
