use super::weights::{ConvLayer, ModelWeights};
use super::Trace;
use crate::error::{Error, Result};
use crate::tensor::{Element, Parameter, Parameterized, Shape, Tape, Tensor, Var};

pub const BLOCK_DIVISOR: usize = 4;
pub const BLOCK_FRAMES: usize = 3;

/// Three (frame, noise map) pairs enter as twelve channels; the first
/// convolution is grouped so each 4-channel pair gets its own 30 filters.
pub const BLOCK_LAYERS: [ConvLayer; 16] = [
    ConvLayer::grouped("enc_conv1a", 12, 90, 3),
    ConvLayer::new("enc_conv1b", 90, 32, 1),
    ConvLayer::new("enc_conv1c", 32, 64, 2),
    ConvLayer::new("enc_conv2a", 64, 64, 1),
    ConvLayer::new("enc_conv2b", 64, 64, 1),
    ConvLayer::new("enc_conv2c", 64, 128, 2),
    ConvLayer::new("enc_conv3a", 128, 128, 1),
    ConvLayer::new("enc_conv3b", 128, 128, 1),
    ConvLayer::new("dec_conv3a", 128, 128, 1),
    ConvLayer::new("dec_conv3b", 128, 128, 1),
    ConvLayer::new("dec_conv3c", 128, 256, 1),
    ConvLayer::new("dec_conv2a", 64, 64, 1),
    ConvLayer::new("dec_conv2b", 64, 64, 1),
    ConvLayer::new("dec_conv2c", 64, 128, 1),
    ConvLayer::new("dec_conv1a", 32, 32, 1),
    ConvLayer::new("dec_conv1b", 32, 3, 1),
];

/// One spatiotemporal fusion block: denoises the middle of three frames
/// as a residual on top of it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalBlock<T: Element = f32> {
    prefix: String,
    pub weights: ModelWeights<T>,
}

impl<T: Element> SpatioTemporalBlock<T> {
    pub fn build(prefix: &str, seed: u64) -> Self {
        SpatioTemporalBlock {
            prefix: prefix.to_string(),
            weights: ModelWeights::seeded(prefix, &BLOCK_LAYERS, seed),
        }
    }

    pub fn zeros(prefix: &str) -> Self {
        SpatioTemporalBlock {
            prefix: prefix.to_string(),
            weights: ModelWeights::zeros(prefix, &BLOCK_LAYERS),
        }
    }

    pub fn from_weights(prefix: &str, weights: ModelWeights<T>) -> Self {
        SpatioTemporalBlock {
            prefix: prefix.to_string(),
            weights,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn check_inputs(tape: &Tape<T>, frames: &[Var], noise_map: Var) -> Result<Shape> {
        if frames.len() != BLOCK_FRAMES {
            return Err(Error::InvalidArgument(format!(
                "spatiotemporal block takes {BLOCK_FRAMES} frames, got {}",
                frames.len()
            )));
        }
        let s = tape.shape(frames[0]);
        if s.c != 3 {
            return Err(Error::shape(
                "st_block_forward",
                format!("frames must have 3 channels, got C={}", s.c),
            ));
        }
        if !s.h.is_multiple_of(BLOCK_DIVISOR) || !s.w.is_multiple_of(BLOCK_DIVISOR) {
            return Err(Error::shape(
                "st_block_forward",
                format!(
                    "height and width must be divisible by {BLOCK_DIVISOR}, got {}x{}",
                    s.h, s.w
                ),
            ));
        }
        for &f in &frames[1..] {
            if tape.shape(f) != s {
                return Err(Error::shape(
                    "st_block_forward",
                    crate::tensor::describe_mismatch(s, tape.shape(f)),
                ));
            }
        }
        let m = tape.shape(noise_map);
        if m != Shape::new(s.n, 1, s.h, s.w) {
            return Err(Error::shape(
                "st_block_forward",
                format!("noise map must be {}x1x{}x{}, got {m}", s.n, s.h, s.w),
            ));
        }
        Ok(s)
    }

    pub fn forward(&self, tape: &mut Tape<T>, frames: &[Var], noise_map: Var) -> Result<Var> {
        self.forward_traced(tape, frames, noise_map, None)
    }

    pub fn forward_traced(
        &self,
        tape: &mut Tape<T>,
        frames: &[Var],
        noise_map: Var,
        mut trace: Option<&mut Trace>,
    ) -> Result<Var> {
        Self::check_inputs(tape, frames, noise_map)?;
        let mut layer = BLOCK_LAYERS.iter();
        let mut conv = |tape: &mut Tape<T>, x: Var, activate: bool, trace: &mut Option<&mut Trace>| -> Result<Var> {
            let l = layer.next().expect("layer schedule exhausted");
            let mut y = self.weights.conv(tape, &self.prefix, l, x)?;
            if activate {
                y = tape.relu(y);
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push((l.name.to_string(), tape.shape(y)));
            }
            Ok(y)
        };
        let note = |tape: &Tape<T>, name: &str, v: Var, trace: &mut Option<&mut Trace>| {
            if let Some(t) = trace.as_deref_mut() {
                t.push((name.to_string(), tape.shape(v)));
            }
        };

        let input = tape.concat_channels(&[frames[0], noise_map, frames[1], noise_map, frames[2], noise_map])?;
        note(tape, "input", input, &mut trace);
        let mut x = conv(tape, input, true, &mut trace)?;
        let skip1 = conv(tape, x, true, &mut trace)?;
        x = conv(tape, skip1, true, &mut trace)?;
        x = conv(tape, x, true, &mut trace)?;
        let skip2 = conv(tape, x, true, &mut trace)?;
        x = conv(tape, skip2, true, &mut trace)?;
        x = conv(tape, x, true, &mut trace)?;
        x = conv(tape, x, true, &mut trace)?;

        x = conv(tape, x, true, &mut trace)?;
        x = conv(tape, x, true, &mut trace)?;
        x = conv(tape, x, true, &mut trace)?;
        x = tape.pixel_shuffle(x, 2)?;
        note(tape, "dec_upsample3", x, &mut trace);
        x = tape.add(x, skip2)?;
        note(tape, "dec_plus3", x, &mut trace);
        x = conv(tape, x, true, &mut trace)?;
        x = conv(tape, x, true, &mut trace)?;
        x = conv(tape, x, true, &mut trace)?;
        x = tape.pixel_shuffle(x, 2)?;
        note(tape, "dec_upsample2", x, &mut trace);
        x = tape.add(x, skip1)?;
        note(tape, "dec_plus2", x, &mut trace);
        x = conv(tape, x, true, &mut trace)?;
        // the residual head is linear so corrections of either sign reach the output
        x = conv(tape, x, false, &mut trace)?;
        let out = tape.add(x, frames[1])?;
        note(tape, "dec_plus1", out, &mut trace);
        Ok(out)
    }

    /// Inference on a throwaway tape; the output is not clamped.
    pub fn infer_raw(&self, frames: [&Tensor<T>; 3], noise_map: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = frames.iter().map(|f| tape.input((*f).clone())).collect();
        let m = tape.input(noise_map.clone());
        let out = self.forward(&mut tape, &vars, m)?;
        Ok(tape.value(out).clone())
    }
}

impl<T: Element> Parameterized<T> for SpatioTemporalBlock<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        self.weights.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.weights.parameters_mut()
    }
}
