use super::weights::{ConvLayer, ModelWeights};
use super::Trace;
use crate::error::{Error, Result};
use crate::tensor::{Element, Parameter, Parameterized, Shape, Tape, Tensor, Var};

/// Spatial sizes must be multiples of this (five stride-2 stages).
pub const SPATIAL_DIVISOR: usize = 32;
const FINAL_SLOPE: f64 = 0.1;

/// Per-frame encoder/decoder. Stride 2 sits on the `b` convolution of
/// stages 1..=5; decoder stages concatenate the matching stride-2 outputs
/// and, last, the network input.
pub const SPATIAL_LAYERS: [ConvLayer; 23] = [
    ConvLayer::new("enc_conv0", 3, 48, 1),
    ConvLayer::new("enc_conv1a", 48, 48, 1),
    ConvLayer::new("enc_conv1b", 48, 48, 2),
    ConvLayer::new("enc_conv2a", 48, 48, 1),
    ConvLayer::new("enc_conv2b", 48, 48, 2),
    ConvLayer::new("enc_conv3a", 48, 48, 1),
    ConvLayer::new("enc_conv3b", 48, 48, 2),
    ConvLayer::new("enc_conv4a", 48, 48, 1),
    ConvLayer::new("enc_conv4b", 48, 48, 2),
    ConvLayer::new("enc_conv5a", 48, 48, 1),
    ConvLayer::new("enc_conv5b", 48, 48, 2),
    ConvLayer::new("enc_conv6", 48, 48, 1),
    ConvLayer::new("dec_conv5a", 96, 96, 1),
    ConvLayer::new("dec_conv5b", 96, 96, 1),
    ConvLayer::new("dec_conv4a", 144, 96, 1),
    ConvLayer::new("dec_conv4b", 96, 96, 1),
    ConvLayer::new("dec_conv3a", 144, 96, 1),
    ConvLayer::new("dec_conv3b", 96, 96, 1),
    ConvLayer::new("dec_conv2a", 144, 96, 1),
    ConvLayer::new("dec_conv2b", 96, 96, 1),
    ConvLayer::new("dec_conv1a", 99, 64, 1),
    ConvLayer::new("dec_conv1b", 64, 32, 1),
    ConvLayer::new("dec_conv0", 32, 3, 1),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDenoiser<T: Element = f32> {
    prefix: String,
    pub weights: ModelWeights<T>,
}

impl<T: Element> SpatialDenoiser<T> {
    pub fn build(seed: u64) -> Self {
        Self::build_named("spatial", seed)
    }

    pub fn build_named(prefix: &str, seed: u64) -> Self {
        SpatialDenoiser {
            prefix: prefix.to_string(),
            weights: ModelWeights::seeded(prefix, &SPATIAL_LAYERS, seed),
        }
    }

    pub fn zeros() -> Self {
        SpatialDenoiser {
            prefix: "spatial".to_string(),
            weights: ModelWeights::zeros("spatial", &SPATIAL_LAYERS),
        }
    }

    pub fn from_weights(prefix: &str, weights: ModelWeights<T>) -> Self {
        SpatialDenoiser {
            prefix: prefix.to_string(),
            weights,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn check_input(shape: Shape) -> Result<()> {
        if shape.c != 3 {
            return Err(Error::shape(
                "spatial_forward",
                format!("expected 3 channels, got C={}", shape.c),
            ));
        }
        if !shape.h.is_multiple_of(SPATIAL_DIVISOR) || !shape.w.is_multiple_of(SPATIAL_DIVISOR) {
            return Err(Error::shape(
                "spatial_forward",
                format!(
                    "height and width must be divisible by {SPATIAL_DIVISOR}, got {}x{}",
                    shape.h, shape.w
                ),
            ));
        }
        Ok(())
    }

    /// Records the unclamped forward pass on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, frame: Var) -> Result<Var> {
        self.forward_traced(tape, frame, None)
    }

    pub fn forward_traced(&self, tape: &mut Tape<T>, frame: Var, mut trace: Option<&mut Trace>) -> Result<Var> {
        Self::check_input(tape.shape(frame))?;
        let mut layer = SPATIAL_LAYERS.iter();
        let mut conv_relu = |tape: &mut Tape<T>, x: Var, trace: &mut Option<&mut Trace>| -> Result<Var> {
            let l = layer.next().expect("layer schedule exhausted");
            let y = self.weights.conv(tape, &self.prefix, l, x)?;
            let y = if l.name == "dec_conv0" {
                tape.leaky_relu(y, FINAL_SLOPE)
            } else {
                tape.relu(y)
            };
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

        let mut x = conv_relu(tape, frame, &mut trace)?;
        x = conv_relu(tape, x, &mut trace)?;
        let skip1 = conv_relu(tape, x, &mut trace)?;
        x = conv_relu(tape, skip1, &mut trace)?;
        let skip2 = conv_relu(tape, x, &mut trace)?;
        x = conv_relu(tape, skip2, &mut trace)?;
        let skip3 = conv_relu(tape, x, &mut trace)?;
        x = conv_relu(tape, skip3, &mut trace)?;
        let skip4 = conv_relu(tape, x, &mut trace)?;
        x = conv_relu(tape, skip4, &mut trace)?;
        x = conv_relu(tape, x, &mut trace)?;
        x = conv_relu(tape, x, &mut trace)?;

        for (stage, skip) in [(5, skip4), (4, skip3), (3, skip2), (2, skip1)] {
            x = tape.upsample_nearest_2x(x);
            note(tape, &format!("dec_upsample{stage}"), x, &mut trace);
            x = tape.concat_channels(&[x, skip])?;
            note(tape, &format!("dec_concat{stage}"), x, &mut trace);
            x = conv_relu(tape, x, &mut trace)?;
            x = conv_relu(tape, x, &mut trace)?;
        }
        x = tape.upsample_nearest_2x(x);
        note(tape, "dec_upsample1", x, &mut trace);
        x = tape.concat_channels(&[x, frame])?;
        note(tape, "dec_concat1", x, &mut trace);
        x = conv_relu(tape, x, &mut trace)?;
        x = conv_relu(tape, x, &mut trace)?;
        conv_relu(tape, x, &mut trace)
    }

    /// Unclamped output on a throwaway inference tape.
    pub fn infer_raw(&self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let x = tape.input(frame.clone());
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    /// Inference-mode denoising: output clamped to [0, 1].
    pub fn denoise(&self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.infer_raw(frame)?.clamp(T::zero(), T::one()))
    }
}

impl<T: Element> Parameterized<T> for SpatialDenoiser<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        self.weights.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.weights.parameters_mut()
    }
}
