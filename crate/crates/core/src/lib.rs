//! Train a small convolutional traffic-sign classifier from scratch and
//! measure how its accuracy collapses under FGSM and PGD attacks.

pub mod attacks;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::RngState;
pub use tensor::Tensor;
