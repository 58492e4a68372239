//! Finite-difference verification of every differentiable operation and of
//! both network architectures.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{SpatialDenoiser, SpatioTemporalBlock};
use crate::rng::{derive_seed, stream};
use crate::tensor::gradcheck::{finite_diff_grad_check, grad_check_model, GradCheckConfig, GradCheckReport};
use crate::tensor::{OpKind, Parameterized, Shape, Tape, Tensor, Var};

type OpFn = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Maximum accepted relative error.
pub const GRAD_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub shapes: String,
    pub report: GradCheckReport,
    pub elapsed: Duration,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRAD_TOLERANCE
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub outcomes: Vec<CheckOutcome>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(CheckOutcome::passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.outcomes.iter().map(|o| o.report.max_rel_error).fold(0.0, f64::max)
    }

    pub fn lines(&self) -> Vec<String> {
        self.outcomes
            .iter()
            .map(|o| {
                format!(
                    "{:<5} {:<22} {:<34} max_rel_err {:.3e} over {} coords ({:.2?})",
                    if o.passed() { "ok" } else { "FAIL" },
                    o.name,
                    o.shapes,
                    o.report.max_rel_error,
                    o.report.checked,
                    o.elapsed
                )
            })
            .collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Uniform values kept at least 0.05 away from the activation kink at 0.
fn off_kink(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Replaces the zero-initialized biases with small random values so that
/// no pre-activation sits exactly on an activation kink, where the
/// gradient is undefined and central differences straddle two slopes.
fn jitter_biases<M: Parameterized<f64>>(model: &mut M, rng: &mut ChaCha8Rng) {
    for p in model.parameters_mut() {
        if p.name.ends_with(".bias") {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
}

fn even(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo / 2..=hi / 2) * 2
}

fn shapes(inputs: &[Tensor<f64>]) -> String {
    inputs
        .iter()
        .map(|t| t.shape().to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Runs the full suite. `fault` flips the sign of one backward rule, for
/// mutation testing of the checker itself.
pub fn grad_check_suite(seed: u64, fault: Option<OpKind>) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut outcomes = op_checks(seed, fault)?;
    outcomes.extend(architecture_checks(seed, fault)?);
    Ok(SuiteReport {
        outcomes,
        elapsed: start.elapsed(),
    })
}

/// Every differentiable operation on random shapes up to 1x12x16x16.
pub fn op_checks(seed: u64, fault: Option<OpKind>) -> Result<Vec<CheckOutcome>> {
    let mut rng = stream(seed);
    let op_cfg = GradCheckConfig {
        perturbation: 1e-3,
        max_coords: Some(64),
        seed: derive_seed(seed, 1),
        fault,
    };
    let mut outcomes = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor<f64>>, op: &OpFn| {
        let t = Instant::now();
        let report = finite_diff_grad_check(op, &inputs, &op_cfg)?;
        outcomes.push(CheckOutcome {
            name: name.to_string(),
            shapes: shapes(&inputs),
            report,
            elapsed: t.elapsed(),
        });
        Ok::<_, crate::Error>(())
    };

    let (cin, cout) = (rng.random_range(1..=12), rng.random_range(1..=12));
    let (h, w) = (even(&mut rng, 4, 16), even(&mut rng, 4, 16));
    let conv_inputs = |rng: &mut ChaCha8Rng, cin: usize, cout: usize, groups: usize, h: usize, w: usize| {
        vec![
            uniform(rng, Shape::new(1, cin, h, w)),
            uniform(rng, Shape::new(cout, cin / groups, 3, 3)),
            uniform(rng, Shape::new(1, cout, 1, 1)),
        ]
    };
    let inputs = conv_inputs(&mut rng, cin, cout, 1, h, w);
    run("conv2d", inputs, &|t, v| t.conv2d(v[0], v[1], v[2], 1, 1))?;

    let inputs = conv_inputs(&mut rng, cin, cout, 1, h, w);
    run("conv2d_stride2", inputs, &|t, v| t.conv2d(v[0], v[1], v[2], 2, 1))?;

    let (gin, gout) = (3 * rng.random_range(1..=4), 3 * rng.random_range(1..=4));
    let inputs = conv_inputs(&mut rng, gin, gout, 3, h, w);
    run("conv2d_grouped", inputs, &|t, v| t.conv2d(v[0], v[1], v[2], 1, 3))?;

    let c = rng.random_range(1..=12);
    let inputs = vec![off_kink(&mut rng, Shape::new(1, c, h, w))];
    run("relu", inputs, &|t, v| Ok(t.relu(v[0])))?;

    let inputs = vec![off_kink(&mut rng, Shape::new(1, c, h, w))];
    run("leaky_relu", inputs, &|t, v| Ok(t.leaky_relu(v[0], 0.1)))?;

    let (sh, sw) = (even(&mut rng, 2, 8), even(&mut rng, 2, 8));
    let groups = rng.random_range(1..=3);
    let inputs = vec![uniform(&mut rng, Shape::new(1, 4 * groups, sh, sw))];
    run("pixel_shuffle", inputs, &|t, v| t.pixel_shuffle(v[0], 2))?;

    let inputs = vec![uniform(&mut rng, Shape::new(1, c, sh, sw))];
    run("upsample_nearest_2x", inputs, &|t, v| Ok(t.upsample_nearest_2x(v[0])))?;

    let c2 = rng.random_range(1..=12 - c.min(11));
    let inputs = vec![
        uniform(&mut rng, Shape::new(1, c, h, w)),
        uniform(&mut rng, Shape::new(1, c2, h, w)),
    ];
    run("concat_channels", inputs, &|t, v| t.concat_channels(&[v[0], v[1]]))?;

    let inputs = vec![
        uniform(&mut rng, Shape::new(1, c, h, w)),
        uniform(&mut rng, Shape::new(1, c, h, w)),
    ];
    run("add", inputs, &|t, v| t.add(v[0], v[1]))?;

    let factor = rng.random_range(-2.0..2.0);
    let inputs = vec![uniform(&mut rng, Shape::new(1, c, h, w))];
    run("scale", inputs, &move |t, v| Ok(t.scale(v[0], factor)))?;

    let inputs = vec![
        uniform(&mut rng, Shape::new(1, c, h, w)),
        uniform(&mut rng, Shape::new(1, c, h, w)),
    ];
    run("mse", inputs, &|t, v| t.mse(v[0], v[1]))?;
    Ok(outcomes)
}

/// Both networks at small sizes, checking inputs and a sample of every
/// parameter tensor.
pub fn architecture_checks(seed: u64, fault: Option<OpKind>) -> Result<Vec<CheckOutcome>> {
    let mut rng = stream(derive_seed(seed, 5));
    let mut outcomes = Vec::new();
    // With a single coordinate perturbed both networks are piecewise linear
    // in it, so a central difference that stays inside one linear piece is
    // exact; a large step keeps roundoff small and crossings are refined.
    let arch_cfg = GradCheckConfig {
        perturbation: 1e-2,
        max_coords: Some(3),
        seed: derive_seed(seed, 2),
        fault,
    };

    let t = Instant::now();
    let mut spatial = SpatialDenoiser::<f64>::build(derive_seed(seed, 3));
    jitter_biases(&mut spatial, &mut rng);
    let inputs = vec![Tensor::from_fn(Shape::new(1, 3, 32, 32), |_, _, _, _| {
        rng.random_range(0.0..1.0)
    })];
    let report = grad_check_model(&mut spatial, &inputs, |tape, m, v| m.forward(tape, v[0]), &arch_cfg)?;
    outcomes.push(CheckOutcome {
        name: "spatial_denoiser".into(),
        shapes: shapes(&inputs),
        report,
        elapsed: t.elapsed(),
    });

    let t = Instant::now();
    let mut block = SpatioTemporalBlock::<f64>::build("block", derive_seed(seed, 4));
    jitter_biases(&mut block, &mut rng);
    let mut inputs: Vec<Tensor<f64>> = (0..3)
        .map(|_| Tensor::from_fn(Shape::new(1, 3, 16, 16), |_, _, _, _| rng.random_range(0.0..1.0)))
        .collect();
    inputs.push(Tensor::full(Shape::new(1, 1, 16, 16), rng.random_range(0.02..0.3)));
    let report = grad_check_model(
        &mut block,
        &inputs,
        |tape, m, v| m.forward(tape, &v[..3], v[3]),
        &arch_cfg,
    )?;
    outcomes.push(CheckOutcome {
        name: "spatiotemporal_block".into(),
        shapes: shapes(&inputs),
        report,
        elapsed: t.elapsed(),
    });

    Ok(outcomes)
}
