//! Surprisal-feedback recurrent networks for byte-level sequence modeling.
//!
//! A simple RNN or LSTM cell receives, next to the current byte, the
//! surprisal `-ln p_{t-1}[x_t]` of that byte under the previous prediction.
//! The crate provides the forward and backward passes, a finite-difference
//! gradient checker, windowed-Adagrad training with truncated BPTT and state
//! carryover, bits-per-character evaluation, checkpoints, and a CLI.

pub mod backprop;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` instantiations used by the trainer, checkpoints and CLI.
pub type Matrix = tensor::Matrix<f64>;
pub type Params = model::Params<f64>;
pub type CarryState = model::CarryState<f64>;
pub type Gradients = backprop::Gradients<f64>;
pub type OptState = optimizer::OptState<f64>;
