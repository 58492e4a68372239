use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, MetricsRow};
use crate::models::{FitvNet, WINDOW};
use crate::noise::{make_noise_map, NoiseSpec};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

/// A fixed noisy window and the clean frame it should reproduce.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalWindow {
    pub id: String,
    pub noisy: Vec<Tensor<f32>>,
    pub clean_center: Tensor<f32>,
    pub noise: NoiseSpec,
}

fn center_crop(frames: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
    let s = frames[0].shape();
    let (h, w) = (s.h / 32 * 32, s.w / 32 * 32);
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "frames of {}x{} are smaller than 32x32",
            s.h, s.w
        )));
    }
    let (top, left) = ((s.h - h) / 2, (s.w - w) / 2);
    frames.iter().map(|f| f.crop(top, left, h, w)).collect()
}

/// The middle window of every sequence, center-cropped to multiples of 32
/// and noised with `noise` (re-seeded per sequence from `noise.seed`).
pub fn eval_windows(data: &[FrameSequence], noise: &NoiseSpec) -> Result<Vec<EvalWindow>> {
    let mut out = Vec::new();
    for (i, seq) in data.iter().enumerate() {
        if seq.len() < WINDOW {
            continue;
        }
        let start = (seq.len() - WINDOW) / 2;
        let clean = FrameSequence::synthetic(center_crop(&seq.frames[start..start + WINDOW])?)?;
        let spec = noise.with_seed(derive_seed(noise.seed, i as u64));
        let noisy = spec.apply(&clean)?;
        out.push(EvalWindow {
            id: format!("seq{i:03}"),
            noisy: noisy.frames,
            clean_center: clean.frames[WINDOW / 2].clone(),
            noise: spec,
        });
    }
    Ok(out)
}

/// Clamped inference on every window, scored against its clean center.
pub fn evaluate(net: &FitvNet<f32>, windows: &[EvalWindow]) -> Result<MetricsReport> {
    let rows = windows
        .iter()
        .map(|w| {
            let s = w.clean_center.shape();
            let map = make_noise_map(&w.noise, s.h, s.w);
            let refs: Vec<&Tensor<f32>> = w.noisy.iter().collect();
            let pred = net.denoise(&refs, &map)?.center;
            MetricsRow::measure(&w.id, &pred, &w.clean_center)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_rows(rows)
}
