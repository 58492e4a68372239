//! Frame sequences on disk and in memory: image IO, window sampling,
//! synthetic sequences, corpus manifests and checkpoints.

mod checkpoint;
mod image_io;
mod manifest;
mod synth;
mod window;

use std::fmt;
use std::path::PathBuf;

pub use checkpoint::{
    decode_tensors, encode_parameters, encode_tensors, write_atomic, Checkpoint, CheckpointMeta, NamedTensor,
    CHECKPOINT_VERSION, MAGIC,
};
pub use image_io::{list_images, load_image, load_sequence, quantize, save_image, save_sequence};
pub use manifest::{read_manifest, scan_entry, write_manifest, ManifestEntry};
pub use synth::{object_position, synth_sequence, SynthConfig};
pub use window::{crop_window, sample_window, Crop, Window};

use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Path(PathBuf),
    Synthetic,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Path(p) => write!(f, "{}", p.display()),
            Source::Synthetic => f.write_str("synthetic"),
        }
    }
}

/// Ordered frames, each 1×3×H×W with values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Tensor<f32>>,
    pub source: Source,
    pub applied_noise: Option<NoiseSpec>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Tensor<f32>>, source: Source) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Empty("a sequence needs at least one frame".into()));
        };
        let s = first.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::shape(
                "frame_sequence",
                format!("frames must be 1x3xHxW, got {s}"),
            ));
        }
        for (i, f) in frames.iter().enumerate().skip(1) {
            if f.shape() != s {
                return Err(Error::shape(
                    "frame_sequence",
                    format!("frame {i} is {} but frame 0 is {s}", f.shape()),
                ));
            }
        }
        Ok(FrameSequence {
            frames,
            source,
            applied_noise: None,
        })
    }

    pub fn synthetic(frames: Vec<Tensor<f32>>) -> Result<Self> {
        Self::new(frames, Source::Synthetic)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_shape(&self) -> Shape {
        self.frames[0].shape()
    }

    pub fn height(&self) -> usize {
        self.frame_shape().h
    }

    pub fn width(&self) -> usize {
        self.frame_shape().w
    }
}
