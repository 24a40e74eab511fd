//! Night image restoration with a vector-quantized codebook prior.

pub mod aiem;
pub mod codebook;
pub mod config;
pub mod data;
pub mod dbca;
pub mod error;
pub mod model;
pub mod gradcheck;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{no_grad, Tensor};
