//! Two-stage video denoising: a per-frame spatial denoiser followed by a
//! cascade of spatiotemporal fusion blocks, with the training objectives,
//! noise synthesis, quality metrics and file formats around it.

pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod noise;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
