//! Seeded noise processes: additive white Gaussian noise, whole-pixel
//! salt-and-pepper impulses, their mixture, and the constant noise-level
//! maps the fusion blocks read.
//!
//! All intensities and standard deviations are in [0, 1] units; 8-bit
//! figures such as sigma = 25.5 are divided by 255 by the caller.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::tensor::{Shape, Tensor};

pub const MIXED_SIGMA: f64 = 25.5 / 255.0;
pub const MIXED_SP_RATIO: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Awgn,
    Mixed,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(NoiseKind::Awgn),
            "mixed" => Ok(NoiseKind::Mixed),
            other => Err(Error::InvalidArgument(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub sp_ratio: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn awgn(sigma: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Awgn,
            sigma,
            sp_ratio: 0.0,
            seed,
        }
    }

    /// Gaussian sigma 25.5/255 followed by 10% salt-and-pepper.
    pub fn mixed(seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Mixed,
            sigma: MIXED_SIGMA,
            sp_ratio: MIXED_SP_RATIO,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        NoiseSpec { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.sp_ratio) {
            return Err(Error::InvalidArgument(format!(
                "salt-and-pepper ratio must be in [0, 1], got {}",
                self.sp_ratio
            )));
        }
        if self.kind == NoiseKind::Awgn && self.sp_ratio != 0.0 {
            return Err(Error::InvalidArgument(
                "awgn noise has no salt-and-pepper component".into(),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, frames: &FrameSequence) -> Result<FrameSequence> {
        self.validate()?;
        let mut out = match self.kind {
            NoiseKind::Awgn => add_awgn(frames, self.sigma, self.seed)?,
            NoiseKind::Mixed => {
                let g = add_awgn(frames, self.sigma, derive_seed(self.seed, 0))?;
                add_salt_pepper(&g, self.sp_ratio, derive_seed(self.seed, 1))?
            }
        };
        out.applied_noise = Some(*self);
        Ok(out)
    }
}

/// Adds i.i.d. `N(0, sigma^2)` to every sample of every frame. Values are
/// not clamped.
pub fn add_awgn(frames: &FrameSequence, sigma: f64, seed: u64) -> Result<FrameSequence> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut rng = stream(seed);
    let mut out = frames.clone();
    for frame in &mut out.frames {
        for v in frame.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = (*v as f64 + sigma * z) as f32;
        }
    }
    out.applied_noise = Some(NoiseSpec::awgn(sigma, seed));
    Ok(out)
}

/// Sets `round(ratio * H * W)` uniformly chosen pixels per frame to black
/// or white (equal odds), across all channels of the pixel. The chosen
/// locations depend only on the seed and the frame geometry.
pub fn add_salt_pepper(frames: &FrameSequence, ratio: f64, seed: u64) -> Result<FrameSequence> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "salt-and-pepper ratio must be in [0, 1], got {ratio}"
        )));
    }
    let mut rng = stream(seed);
    let mut out = frames.clone();
    for frame in &mut out.frames {
        let s = frame.shape();
        let pixels = s.plane();
        let count = ((ratio * pixels as f64).round() as usize).min(pixels);
        let chosen = sample(&mut rng, pixels, count).into_vec();
        for idx in chosen {
            let value = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            for n in 0..s.n {
                for c in 0..s.c {
                    frame.data_mut()[(n * s.c + c) * pixels + idx] = value;
                }
            }
        }
    }
    out.applied_noise = Some(NoiseSpec {
        kind: NoiseKind::Mixed,
        sigma: 0.0,
        sp_ratio: ratio,
        seed,
    });
    Ok(out)
}

pub fn add_mixed(frames: &FrameSequence, seed: u64) -> Result<FrameSequence> {
    NoiseSpec::mixed(seed).apply(frames)
}

/// Constant 1×1×h×w map holding `spec.sigma`.
pub fn make_noise_map(spec: &NoiseSpec, h: usize, w: usize) -> Tensor<f32> {
    Tensor::full(Shape::new(1, 1, h, w), spec.sigma as f32)
}

/// Per-item noise maps stacked along the batch axis.
pub fn batch_noise_map(sigmas: &[f64], h: usize, w: usize) -> Result<Tensor<f32>> {
    let maps: Vec<Tensor<f32>> = sigmas
        .iter()
        .map(|&s| Tensor::full(Shape::new(1, 1, h, w), s as f32))
        .collect();
    Tensor::stack(&maps.iter().collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, frames: usize) -> FrameSequence {
        FrameSequence::synthetic((0..frames).map(|_| Tensor::full(Shape::new(1, 3, h, w), 0.5)).collect()).unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let s = gray(8, 8, 2);
        assert_eq!(add_awgn(&s, 0.0, 3).unwrap().frames, s.frames);
        assert!(add_awgn(&s, -0.1, 3).is_err());
    }

    #[test]
    fn zero_ratio_identity_and_full_ratio_saturates() {
        let s = gray(16, 16, 1);
        assert_eq!(add_salt_pepper(&s, 0.0, 1).unwrap().frames, s.frames);
        let all = add_salt_pepper(&s, 1.0, 1).unwrap();
        assert!(all.frames[0].data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(add_salt_pepper(&s, 1.5, 1).is_err());
    }

    #[test]
    fn seeds_are_deterministic() {
        let s = gray(16, 16, 2);
        assert_eq!(add_mixed(&s, 9).unwrap().frames, add_mixed(&s, 9).unwrap().frames);
        assert_ne!(add_mixed(&s, 9).unwrap().frames, add_mixed(&s, 10).unwrap().frames);
    }

    #[test]
    fn mixed_spec_defaults() {
        let m = NoiseSpec::mixed(0);
        assert_eq!((m.sigma, m.sp_ratio), (25.5 / 255.0, 0.10));
        assert!(NoiseSpec {
            sp_ratio: 0.2,
            ..NoiseSpec::awgn(0.1, 0)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn noise_map_fill() {
        let m = make_noise_map(&NoiseSpec::awgn(25.0 / 255.0, 0), 64, 64);
        assert_eq!(m.shape(), Shape::new(1, 1, 64, 64));
        assert!(m.data().iter().all(|&v| v == (25.0f64 / 255.0) as f32));
        let z = make_noise_map(&NoiseSpec::awgn(0.0, 0), 4, 4);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn salt_pepper_locations_ignore_content() {
        let a = gray(16, 16, 1);
        let b = FrameSequence::synthetic(vec![Tensor::full(Shape::new(1, 3, 16, 16), 0.25)]).unwrap();
        let mask = |s: &FrameSequence| -> Vec<bool> {
            let n = add_salt_pepper(s, 0.3, 4).unwrap();
            let base = s.frames[0].data()[0];
            n.frames[0].plane(0, 0).iter().map(|&v| v != base).collect()
        };
        assert_eq!(mask(&a), mask(&b));
    }
}
