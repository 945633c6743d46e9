//! Sampling inputs that make a classifier produce a chosen confidence pattern.

pub mod autodiff;
pub mod error;
pub mod nn;
pub mod pgm;
pub mod samplers;
pub mod scene;
pub mod targets;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Activation, Tensor};
