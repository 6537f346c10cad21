//! Self-supervised degradation learning for lithium-ion battery health.
//!
//! Voltage/current windows from discharge cycles are detrended with an
//! empirical wavelet transform, embedded by a convolutional network, and
//! scored by a transformer encoder that is trained only to keep later cycles
//! less healthy than earlier ones.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod ewt;
pub mod finetune;
pub mod nn;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model32 = nn::Model<f32>;
pub type Model64 = nn::Model<f64>;
pub type ModelParams32 = nn::ModelParams<f32>;
pub type ModelParams64 = nn::ModelParams<f64>;
pub type Patch32 = data::Patch<f32>;
pub type Patch64 = data::Patch<f64>;
