//! Core library for a desk-scale drone-tracking stack: a small fully
//! convolutional network that maps 160x160 grayscale frames to coarse
//! detection maps, plus the machinery around it, training, ground-truth
//! map synthesis and decoding, post-training int8 quantization, a
//! microcontroller deployment planner, an evaluation harness, and a
//! closed-loop tracking simulator with a synthetic renderer.

pub mod codec;
pub mod dataset;
pub mod deploy;
pub mod error;
pub mod eval;
pub mod layer;
pub mod metrics;
pub mod model;
pub mod modelio;
pub mod plot;
pub mod quant;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Crate version, for provenance records.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
