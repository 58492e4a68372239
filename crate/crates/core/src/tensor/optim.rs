use serde::{Deserialize, Serialize};

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// A named trainable tensor together with its ADAM moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Element = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
    pub step_count: u64,
}

impl<T: Element> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape();
        Parameter {
            name: name.into(),
            value,
            adam_m: Tensor::zeros(shape),
            adam_v: Tensor::zeros(shape),
            step_count: 0,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Anything that owns an ordered list of named parameters.
pub trait Parameterized<T: Element> {
    fn parameters(&self) -> Vec<&Parameter<T>>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>>;

    fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid optimizer config {self:?}")))
        }
    }
}

/// One bias-corrected ADAM update of `param` from its recorded gradient.
/// The gradient is consumed (cleared) by the step.
pub fn adam_step<T: Element>(param: &mut Parameter<T>, config: &OptimizerConfig) -> Result<()> {
    let grad = param
        .value
        .grad
        .take()
        .ok_or_else(|| Error::MissingGradient(param.name.clone()))?;
    param.step_count += 1;
    let t = param.step_count as i32;
    let b1 = config.beta1;
    let b2 = config.beta2;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let eps = config.epsilon;

    let values = param.value.data_mut();
    let m = param.adam_m.data_mut();
    let v = param.adam_v.data_mut();
    for i in 0..values.len() {
        let g = grad[i].as_f64();
        let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
        let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
        m[i] = T::from_f64(mi);
        v[i] = T::from_f64(vi);
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        let update = lr * m_hat / (v_hat.sqrt() + eps);
        values[i] = T::from_f64(values[i].as_f64() - update);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn param_with_grad(g: f64) -> Parameter<f64> {
        let mut p = Parameter::new("p", Tensor::full(Shape::new(1, 1, 1, 4), 1.0));
        p.value.grad = Some(vec![g; 4]);
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = OptimizerConfig::default();
        let mut p = param_with_grad(1.0);
        adam_step(&mut p, &cfg).unwrap();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        let expected = 1.0 - cfg.learning_rate / (1.0 + cfg.epsilon);
        for &x in p.value.data() {
            assert!((x - expected).abs() < 1e-15);
        }
        assert_eq!(p.step_count, 1);
        assert!(p.value.grad.is_none());
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = param_with_grad(0.0);
        adam_step(&mut p, &OptimizerConfig::default()).unwrap();
        assert!(p.value.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let cfg = OptimizerConfig::default();
        let mut a = param_with_grad(0.3);
        let mut b = param_with_grad(0.3);
        for _ in 0..3 {
            a.value.grad = Some(vec![0.3; 4]);
            b.value.grad = Some(vec![0.3; 4]);
            adam_step(&mut a, &cfg).unwrap();
            adam_step(&mut b, &cfg).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn missing_gradient_rejected() {
        let mut p = Parameter::new("w", Tensor::<f32>::zeros(Shape::scalar()));
        let err = adam_step(&mut p, &OptimizerConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(p.step_count, 0);
    }

    #[test]
    fn default_config_values() {
        let c = OptimizerConfig::default();
        assert_eq!((c.learning_rate, c.beta1, c.beta2, c.epsilon), (1e-4, 0.9, 0.999, 1e-8));
        c.validate().unwrap();
    }
}
