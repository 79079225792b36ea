//! Multi-speaker, multi-style non-autoregressive acoustic model with
//! timbre/style disentanglement, plus the feature front-end, training loop,
//! synthesis tools and verification harness around it.

pub mod error;
pub mod features;
pub mod graph;
pub mod model;
pub mod normalize;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
