//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{OpKind, Parameter, Parameterized, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub perturbation: f64,
    /// Check at most this many randomly chosen coordinates per tensor.
    pub max_coords: Option<usize>,
    pub seed: u64,
    #[doc(hidden)]
    pub fault: Option<OpKind>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            perturbation: 1e-3,
            max_coords: None,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Worst {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose step had to shrink because a perturbation moved
    /// some activation input across zero.
    pub refined: usize,
    pub worst: Option<Worst>,
}

impl GradCheckReport {
    fn record(&mut self, tensor: &str, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some(Worst {
                tensor: tensor.to_string(),
                index,
                analytic,
                numeric,
            });
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

struct NoParams;

impl Parameterized<f64> for NoParams {
    fn parameters(&self) -> Vec<&Parameter<f64>> {
        Vec::new()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        Vec::new()
    }
}

/// Checks the gradient of `op` with respect to each of `inputs`.
///
/// The output is projected onto a fixed random weighting so that every
/// output element contributes; the analytic gradient of that projection is
/// compared against central differences coordinate by coordinate.
pub fn finite_diff_grad_check<F>(op: F, inputs: &[Tensor<f64>], config: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut none = NoParams;
    grad_check_model(&mut none, inputs, |tape, _: &NoParams, vars| op(tape, vars), config)
}

/// Like [`finite_diff_grad_check`], additionally checking every parameter
/// of `model` that `forward` binds.
pub fn grad_check_model<M, F>(
    model: &mut M,
    inputs: &[Tensor<f64>],
    forward: F,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    M: Parameterized<f64>,
    F: Fn(&mut Tape<f64>, &M, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut tape = Tape::<f64>::new();
    if let Some(kind) = config.fault {
        tape.inject_sign_flip(kind);
    }
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input_with_grad(t.clone())).collect();
    let out = forward(&mut tape, model, &vars)?;
    let out_value = tape.value(out).clone();
    if !out_value.is_finite() {
        return Err(Error::NonFinite("forward produced non-finite values".into()));
    }
    let projection: Vec<f64> = (0..out_value.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    tape.backward_with(out, projection.clone())?;

    let objective = |tape: &Tape<f64>, var: Var| -> f64 {
        tape.value(var).data().iter().zip(&projection).map(|(a, b)| a * b).sum()
    };
    let evaluate = |model: &M, inputs: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut t = Tape::<f64>::inference();
        let vs: Vec<Var> = inputs.iter().map(|x| t.input(x.clone())).collect();
        let o = forward(&mut t, model, &vs)?;
        let v = objective(&t, o);
        if !v.is_finite() {
            return Err(Error::NonFinite("perturbed forward produced non-finite values".into()));
        }
        Ok((v, t.activation_signature()))
    };
    let base_signature = tape.activation_signature();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        refined: 0,
        worst: None,
    };
    // The objective is piecewise smooth with kinks where an activation input
    // changes sign. Each side's step is halved until its probe keeps the base
    // activation pattern, and the secant over [-minus, +plus] is returned;
    // inside one piece of a piecewise-linear function it is exact, and
    // without kinks it is the ordinary central difference.
    let central = |report: &mut GradCheckReport, probe: &mut dyn FnMut(f64) -> Result<(f64, u64)>| -> Result<f64> {
        let floor = config.perturbation * 1e-6;
        let mut side = |dir: f64, report: &mut GradCheckReport| -> Result<(f64, f64)> {
            let mut step = config.perturbation;
            loop {
                let (v, sig) = probe(dir * step)?;
                if sig == base_signature || step <= floor {
                    return Ok((v, step));
                }
                report.refined += 1;
                step /= 2.0;
            }
        };
        let (plus, up) = side(1.0, report)?;
        let (minus, down) = side(-1.0, report)?;
        Ok((plus - minus) / (up + down))
    };
    let pick = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        match config.max_coords {
            Some(m) if m < len => sample(rng, len, m).into_vec(),
            _ => (0..len).collect(),
        }
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = match tape.grad(*var) {
            Some(g) => g.to_vec(),
            None => vec![0.0; inputs[i].len()],
        };
        for idx in pick(inputs[i].len(), &mut rng) {
            let orig = work[i].data()[idx];
            let numeric = central(&mut report, &mut |d| {
                work[i].data_mut()[idx] = orig + d;
                let r = evaluate(model, &work);
                work[i].data_mut()[idx] = orig;
                r
            })?;
            report.record(&format!("input{i}"), idx, analytic[idx], numeric);
        }
    }

    let names: Vec<String> = model.parameters().iter().map(|p| p.name.clone()).collect();
    for (pi, name) in names.iter().enumerate() {
        let Some(analytic) = tape.param_grad(name).map(<[f64]>::to_vec) else {
            continue;
        };
        let len = analytic.len();
        for idx in pick(len, &mut rng) {
            let orig = model.parameters()[pi].value.data()[idx];
            let numeric = central(&mut report, &mut |d| {
                model.parameters_mut()[pi].value.data_mut()[idx] = orig + d;
                let r = evaluate(model, inputs);
                model.parameters_mut()[pi].value.data_mut()[idx] = orig;
                r
            })?;
            report.record(name, idx, analytic[idx], numeric);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn uniform(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.001) - 0.001 / 1.001).abs() < 1e-15);
    }

    #[test]
    fn detects_sign_flip() {
        let x = uniform(Shape::new(1, 2, 4, 4), 3);
        let op = |t: &mut Tape<f64>, v: &[Var]| Ok(t.scale(v[0], 2.5));
        let good = finite_diff_grad_check(op, std::slice::from_ref(&x), &GradCheckConfig::default()).unwrap();
        assert!(good.max_rel_error < 1e-8);
        let cfg = GradCheckConfig {
            fault: Some(OpKind::Scale),
            ..Default::default()
        };
        let bad = finite_diff_grad_check(op, &[x], &cfg).unwrap();
        assert!(bad.max_rel_error > 1.0);
    }
}
