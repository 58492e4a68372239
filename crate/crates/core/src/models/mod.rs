//! The spatial denoiser, the spatiotemporal fusion block and their
//! two-stage composition.

mod fitvnet;
mod spatial;
mod st_block;
mod weights;

use crate::tensor::Shape;

pub use fitvnet::{expand_noise_map, FitvNet, FitvOutput, InferenceOutput, WINDOW};
pub use spatial::{SpatialDenoiser, SPATIAL_DIVISOR, SPATIAL_LAYERS};
pub use st_block::{SpatioTemporalBlock, BLOCK_DIVISOR, BLOCK_FRAMES, BLOCK_LAYERS};
pub use weights::{param_count, ConvLayer, ModelWeights};

/// Activation shapes recorded by the `forward_traced` methods.
pub type Trace = Vec<(String, Shape)>;
