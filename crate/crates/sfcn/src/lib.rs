//! Symmetric two-stream fully convolutional network for salient object
//! detection: reciprocal-pair input reflection, weight-shared sibling
//! encoders with per-domain batch-norm statistics, hierarchical fusion
//! decoding, a weighted structural loss, and a saliency evaluation suite.
//!
//! Everything runs on a self-contained f64 tensor core with tape-based
//! reverse-mode differentiation, sized for CPU-scale experiments.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod norm;
pub mod reflection;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
