use super::spatial::SpatialDenoiser;
use super::st_block::SpatioTemporalBlock;
use crate::error::{Error, Result};
use crate::tensor::{Element, Parameter, Parameterized, Shape, Tape, Tensor, Var};

/// Frames per window (2K+1 with K = 2).
pub const WINDOW: usize = 5;

/// Spatial stage shared across all five frames, then two fusion blocks:
/// `block1` runs on the triplets (0,1,2), (1,2,3), (2,3,4) with one weight
/// set, `block2` fuses block1's three outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FitvNet<T: Element = f32> {
    pub spatial: SpatialDenoiser<T>,
    pub block1: SpatioTemporalBlock<T>,
    pub block2: SpatioTemporalBlock<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct FitvOutput {
    pub center: Var,
    pub stage1: [Var; WINDOW],
}

#[derive(Debug, Clone)]
pub struct InferenceOutput<T: Element = f32> {
    /// Clamped to [0, 1].
    pub center: Tensor<T>,
    /// Clamped stage-1 outputs, one per input frame.
    pub stage1: Vec<Tensor<T>>,
}

/// Repeats a single-item noise map along the batch axis.
pub fn expand_noise_map<T: Element>(map: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let s = map.shape();
    if s.n == n {
        return Ok(map.clone());
    }
    if s.n != 1 {
        return Err(Error::shape("noise_map", format!("batch {} cannot expand to {n}", s.n)));
    }
    let items: Vec<&Tensor<T>> = std::iter::repeat_n(map, n).collect();
    Tensor::stack(&items)
}

impl<T: Element> FitvNet<T> {
    /// Three independently seeded weight sets derived from one seed.
    pub fn build(seed: u64) -> Self {
        FitvNet {
            spatial: SpatialDenoiser::build(seed),
            block1: SpatioTemporalBlock::build("block1", seed.wrapping_add(1)),
            block2: SpatioTemporalBlock::build("block2", seed.wrapping_add(2)),
        }
    }

    pub fn zeros() -> Self {
        FitvNet {
            spatial: SpatialDenoiser::zeros(),
            block1: SpatioTemporalBlock::zeros("block1"),
            block2: SpatioTemporalBlock::zeros("block2"),
        }
    }

    fn check_frames(tape: &Tape<T>, frames: &[Var]) -> Result<Shape> {
        if frames.len() != WINDOW {
            return Err(Error::InvalidArgument(format!(
                "the network takes {WINDOW} frames, got {}",
                frames.len()
            )));
        }
        let s = tape.shape(frames[0]);
        SpatialDenoiser::<T>::check_input(s)?;
        for &f in &frames[1..] {
            if tape.shape(f) != s {
                return Err(Error::shape(
                    "fitvnet_forward",
                    crate::tensor::describe_mismatch(s, tape.shape(f)),
                ));
            }
        }
        Ok(s)
    }

    /// Records the full two-stage pass; outputs are unclamped.
    pub fn forward(&self, tape: &mut Tape<T>, frames: &[Var], noise_map: Var) -> Result<FitvOutput> {
        Self::check_frames(tape, frames)?;
        let mut stage1 = [frames[0]; WINDOW];
        for (out, &f) in stage1.iter_mut().zip(frames) {
            *out = self.spatial.forward(tape, f)?;
        }
        let center = self.fuse(tape, &stage1, noise_map)?;
        Ok(FitvOutput { center, stage1 })
    }

    /// The second stage alone, applied to five stage-1 outputs.
    pub fn fuse(&self, tape: &mut Tape<T>, stage1: &[Var], noise_map: Var) -> Result<Var> {
        if stage1.len() != WINDOW {
            return Err(Error::InvalidArgument(format!(
                "fusion takes {WINDOW} frames, got {}",
                stage1.len()
            )));
        }
        let mut mid = [stage1[0]; 3];
        for (t, out) in mid.iter_mut().enumerate() {
            *out = self.block1.forward(tape, &stage1[t..t + 3], noise_map)?;
        }
        self.block2.forward(tape, &mid, noise_map)
    }

    /// Inference-mode denoising of the center frame of `frames`. Each
    /// stage runs on its own tape so activations are released early.
    pub fn denoise(&self, frames: &[&Tensor<T>], noise_map: &Tensor<T>) -> Result<InferenceOutput<T>> {
        if frames.len() != WINDOW {
            return Err(Error::InvalidArgument(format!(
                "the network takes {WINDOW} frames, got {}",
                frames.len()
            )));
        }
        let raw: Vec<Tensor<T>> = frames
            .iter()
            .map(|f| self.spatial.infer_raw(f))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor<T>> = raw.iter().collect();
        let center = self.fuse_raw(&refs, noise_map)?;
        Ok(InferenceOutput {
            center: center.clamp(T::zero(), T::one()),
            stage1: raw.iter().map(|t| t.clamp(T::zero(), T::one())).collect(),
        })
    }

    /// Second stage on unclamped stage-1 outputs; the result is unclamped.
    pub fn fuse_raw(&self, stage1: &[&Tensor<T>], noise_map: &Tensor<T>) -> Result<Tensor<T>> {
        if stage1.len() != WINDOW {
            return Err(Error::InvalidArgument(format!(
                "fusion takes {WINDOW} frames, got {}",
                stage1.len()
            )));
        }
        let map = expand_noise_map(noise_map, stage1[0].shape().n)?;
        let mid: Vec<Tensor<T>> = (0..3)
            .map(|t| self.block1.infer_raw([stage1[t], stage1[t + 1], stage1[t + 2]], &map))
            .collect::<Result<_>>()?;
        self.block2.infer_raw([&mid[0], &mid[1], &mid[2]], &map)
    }

    pub fn cast<U: Element>(&self) -> FitvNet<U> {
        FitvNet {
            spatial: SpatialDenoiser::from_weights(self.spatial.prefix(), self.spatial.weights.cast()),
            block1: SpatioTemporalBlock::from_weights(self.block1.prefix(), self.block1.weights.cast()),
            block2: SpatioTemporalBlock::from_weights(self.block2.prefix(), self.block2.weights.cast()),
        }
    }
}

impl<T: Element> Parameterized<T> for FitvNet<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut v = self.spatial.parameters();
        v.extend(self.block1.parameters());
        v.extend(self.block2.parameters());
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.spatial.parameters_mut();
        v.extend(self.block1.parameters_mut());
        v.extend(self.block2.parameters_mut());
        v
    }
}
