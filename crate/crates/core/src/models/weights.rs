use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Parameter, Parameterized, Shape, Tape, Tensor, Var};

/// One 3×3 convolution of a layer schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: &'static str,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub groups: usize,
}

impl ConvLayer {
    pub const fn new(name: &'static str, cin: usize, cout: usize, stride: usize) -> Self {
        ConvLayer {
            name,
            cin,
            cout,
            stride,
            groups: 1,
        }
    }

    pub const fn grouped(name: &'static str, cin: usize, cout: usize, groups: usize) -> Self {
        ConvLayer {
            name,
            cin,
            cout,
            stride: 1,
            groups,
        }
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.cout, self.cin / self.groups, 3, 3)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.cout, 1, 1)
    }

    pub fn fan_in(&self) -> usize {
        self.cin / self.groups * 9
    }
}

/// Named, ordered parameter tensors for one architecture instance: a
/// `weight` and a `bias` per convolution, named `<prefix>.<layer>.weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T: Element = f32> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Element> ModelWeights<T> {
    pub fn empty() -> Self {
        ModelWeights {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Uniform `±sqrt(1 / fan_in)` weights from a seeded stream, zero bias.
    pub fn seeded(prefix: &str, layers: &[ConvLayer], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::empty();
        for layer in layers {
            let bound = (1.0 / layer.fan_in() as f64).sqrt();
            let weight = Tensor::from_fn(layer.weight_shape(), |_, _, _, _| {
                T::from_f64(rng.random_range(-bound..bound))
            });
            w.push(Parameter::new(format!("{prefix}.{}.weight", layer.name), weight));
            w.push(Parameter::new(
                format!("{prefix}.{}.bias", layer.name),
                Tensor::zeros(layer.bias_shape()),
            ));
        }
        w
    }

    pub fn zeros(prefix: &str, layers: &[ConvLayer]) -> Self {
        let mut w = Self::empty();
        for layer in layers {
            w.push(Parameter::new(
                format!("{prefix}.{}.weight", layer.name),
                Tensor::zeros(layer.weight_shape()),
            ));
            w.push(Parameter::new(
                format!("{prefix}.{}.bias", layer.name),
                Tensor::zeros(layer.bias_shape()),
            ));
        }
        w
    }

    fn push(&mut self, p: Parameter<T>) {
        self.index.insert(p.name.clone(), self.params.len());
        self.params.push(p);
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn cast<U: Element>(&self) -> ModelWeights<U> {
        let mut out = ModelWeights::empty();
        for p in &self.params {
            out.push(Parameter {
                name: p.name.clone(),
                value: p.value.cast(),
                adam_m: p.adam_m.cast(),
                adam_v: p.adam_v.cast(),
                step_count: p.step_count,
            });
        }
        out
    }

    /// Binds the weight and bias of `layer` and applies the convolution.
    pub(crate) fn conv(&self, tape: &mut Tape<T>, prefix: &str, layer: &ConvLayer, x: Var) -> Result<Var> {
        let lookup = |suffix: &str| {
            let name = format!("{prefix}.{}.{suffix}", layer.name);
            self.get(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
        };
        let w = tape.param(lookup("weight")?);
        let b = tape.param(lookup("bias")?);
        tape.conv2d(x, w, b, layer.stride, layer.groups)
    }
}

impl<T: Element> Parameterized<T> for ModelWeights<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        self.params.iter().collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.params.iter_mut().collect()
    }
}

/// Total scalar parameter count.
pub fn param_count<T: Element>(weights: &ModelWeights<T>) -> usize {
    weights.param_count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_weights_count_zero() {
        assert_eq!(param_count(&ModelWeights::<f32>::empty()), 0);
    }

    #[test]
    fn single_conv_count() {
        let w = ModelWeights::<f32>::seeded("m", &[ConvLayer::new("c", 3, 48, 1)], 0);
        assert_eq!(param_count(&w), 48 * (3 * 9 + 1));
    }

    #[test]
    fn init_bounds_and_determinism() {
        let layers = [ConvLayer::new("a", 4, 8, 1), ConvLayer::grouped("g", 12, 90, 3)];
        let a = ModelWeights::<f32>::seeded("m", &layers, 7);
        let b = ModelWeights::<f32>::seeded("m", &layers, 7);
        let c = ModelWeights::<f32>::seeded("m", &layers, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (1.0f32 / 36.0).sqrt();
        assert!(a
            .get("m.a.weight")
            .unwrap()
            .value
            .data()
            .iter()
            .all(|v| v.abs() <= bound));
        assert!(a.get("m.g.bias").unwrap().value.data().iter().all(|&v| v == 0.0));
        assert_eq!(a.get("m.g.weight").unwrap().value.shape(), Shape::new(90, 4, 3, 3));
    }
}
