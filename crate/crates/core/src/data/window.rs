use rand::Rng;

use super::FrameSequence;
use crate::error::{Error, Result};
use crate::models::WINDOW;
use crate::rng::stream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    pub frames: Vec<Tensor<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub top: usize,
    pub left: usize,
    pub frames: Vec<Tensor<f32>>,
}

/// A uniformly chosen run of consecutive frames.
pub fn sample_window(seq: &FrameSequence, seed: u64) -> Result<Window> {
    if seq.len() < WINDOW {
        return Err(Error::InvalidArgument(format!(
            "a window needs {WINDOW} frames, the sequence has {}",
            seq.len()
        )));
    }
    let start = stream(seed).random_range(0..=seq.len() - WINDOW);
    Ok(Window {
        start,
        frames: seq.frames[start..start + WINDOW].to_vec(),
    })
}

/// Crops every frame at one shared random top-left corner.
pub fn crop_window(frames: &[Tensor<f32>], size: usize, seed: u64) -> Result<Crop> {
    let Some(first) = frames.first() else {
        return Err(Error::Empty("no frames to crop".into()));
    };
    let s = first.shape();
    if size == 0 || !size.is_multiple_of(32) {
        return Err(Error::InvalidArgument(format!(
            "crop size {size} must be a positive multiple of 32"
        )));
    }
    if size > s.h || size > s.w {
        return Err(Error::InvalidArgument(format!(
            "crop size {size} exceeds the {}x{} frame",
            s.h, s.w
        )));
    }
    let mut rng = stream(seed);
    let top = rng.random_range(0..=s.h - size);
    let left = rng.random_range(0..=s.w - size);
    let frames = frames
        .iter()
        .map(|f| f.crop(top, left, size, size))
        .collect::<Result<_>>()?;
    Ok(Crop { top, left, frames })
}
