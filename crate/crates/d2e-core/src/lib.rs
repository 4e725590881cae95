//! Core engine for direct-to-event transfer experiments on spiking networks:
//! a tape autodiff over dense f64 tensors, LIF neuron dynamics with surrogate
//! spike gradients, input encoders, a small architecture zoo, the transfer
//! training procedures, and the analysis/reporting toolkit around them.

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod encoders;
pub mod energy;
pub mod error;
pub mod kernels;
pub mod network;
pub mod neuron;
pub mod optim;
pub mod plot;
pub mod tape;
pub mod tensor;
pub mod transfer;

pub use error::{D2eError, Result};
pub use tensor::Tensor;
