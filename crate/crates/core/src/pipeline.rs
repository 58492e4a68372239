//! Whole-sequence inference with a sliding five-frame window.

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::models::{FitvNet, SPATIAL_DIVISOR, WINDOW};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone)]
pub struct DenoisedSequence {
    pub frames: Vec<Tensor<f32>>,
    /// Per output frame, the five clamped stage-1 outputs of its window.
    pub stage1: Option<Vec<Vec<Tensor<f32>>>>,
}

/// Pads H and W up to multiples of `m` by repeating the last row/column.
fn pad_to_multiple(t: &Tensor<f32>, m: usize) -> Tensor<f32> {
    let s = t.shape();
    let (h, w) = (s.h.div_ceil(m) * m, s.w.div_ceil(m) * m);
    if (h, w) == (s.h, s.w) {
        return t.clone();
    }
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| {
        t.at(n, c, y.min(s.h - 1), x.min(s.w - 1))
    })
}

/// Index of frame `t + offset` with out-of-range positions clamped to the
/// first or last frame.
fn replicate(len: usize, t: usize, offset: isize) -> usize {
    (t as isize + offset).clamp(0, len as isize - 1) as usize
}

/// Denoises every frame of `seq`. Each output frame is the center of a
/// five-frame window; windows at the ends repeat the first or last frame.
/// Frames whose size is not a multiple of 32 are edge-padded for the
/// network and cropped back.
pub fn denoise_sequence(
    net: &FitvNet<f32>,
    seq: &FrameSequence,
    sigma: f64,
    dump_stage1: bool,
) -> Result<DenoisedSequence> {
    if seq.len() < WINDOW {
        return Err(Error::InvalidArgument(format!(
            "denoising needs at least {WINDOW} frames, got {}",
            seq.len()
        )));
    }
    let s = seq.frame_shape();
    let padded: Vec<Tensor<f32>> = seq.frames.iter().map(|f| pad_to_multiple(f, SPATIAL_DIVISOR)).collect();
    let ps = padded[0].shape();
    let map = Tensor::full(Shape::new(1, 1, ps.h, ps.w), sigma as f32);
    // Stage-1 outputs are computed once per input frame and reused by
    // every window that contains it.
    let stage1: Vec<Tensor<f32>> = padded.iter().map(|f| net.spatial.infer_raw(f)).collect::<Result<_>>()?;

    let half = (WINDOW / 2) as isize;
    let mut frames = Vec::with_capacity(seq.len());
    let mut dumps = dump_stage1.then(Vec::new);
    for t in 0..seq.len() {
        let idx: Vec<usize> = (-half..=half).map(|o| replicate(seq.len(), t, o)).collect();
        let window: Vec<&Tensor<f32>> = idx.iter().map(|&i| &stage1[i]).collect();
        let out = net.fuse_raw(&window, &map)?.clamp(0.0, 1.0);
        frames.push(out.crop(0, 0, s.h, s.w)?);
        if let Some(d) = dumps.as_mut() {
            d.push(
                window
                    .iter()
                    .map(|w| w.clamp(0.0, 1.0).crop(0, 0, s.h, s.w))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
    }
    Ok(DenoisedSequence { frames, stage1: dumps })
}

/// Stage-1 output alone for one frame, clamped.
pub fn denoise_stage1(net: &FitvNet<f32>, frame: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = frame.shape();
    let out = net.spatial.denoise(&pad_to_multiple(frame, SPATIAL_DIVISOR))?;
    out.crop(0, 0, s.h, s.w)
}

/// Full two-stage output for frame `t` of `seq`, clamped.
pub fn denoise_frame(net: &FitvNet<f32>, seq: &FrameSequence, t: usize, sigma: f64) -> Result<Tensor<f32>> {
    if t >= seq.len() {
        return Err(Error::InvalidArgument(format!(
            "frame {t} out of range for {} frames",
            seq.len()
        )));
    }
    let s = seq.frame_shape();
    let half = (WINDOW / 2) as isize;
    let window: Vec<Tensor<f32>> = (-half..=half)
        .map(|o| pad_to_multiple(&seq.frames[replicate(seq.len(), t, o)], SPATIAL_DIVISOR))
        .collect();
    let ps = window[0].shape();
    let map = Tensor::full(Shape::new(1, 1, ps.h, ps.w), sigma as f32);
    let refs: Vec<&Tensor<f32>> = window.iter().collect();
    net.denoise(&refs, &map)?.center.crop(0, 0, s.h, s.w)
}
