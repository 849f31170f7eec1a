//! Convolutional patch networks for pixel-wise labeling.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod inference;
pub mod layers;
pub mod network;
pub mod postproc;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
