use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::tensor::{Tape, Var};

/// Sum over the window of the per-frame mean squared error between stage-1
/// outputs and their targets. Targets should be tape inputs without
/// gradient.
pub fn loss_pd(tape: &mut Tape<f32>, stage1: &[Var], targets: &[Var]) -> Result<Var> {
    if stage1.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} stage-1 outputs but {} targets",
            stage1.len(),
            targets.len()
        )));
    }
    let terms = stage1
        .iter()
        .zip(targets)
        .map(|(&o, &t)| tape.mse(o, t))
        .collect::<Result<Vec<_>>>()?;
    tape.sum(&terms)
}

/// [`loss_pd`] against an independently noised copy of the clean window.
/// `target_noise[i]` and `input_noise[i]` describe batch item `i`; no
/// target rendering may reuse its input's noise seed.
pub fn loss_pd_jsn(
    tape: &mut Tape<f32>,
    stage1: &[Var],
    noisy_targets: &[Var],
    target_noise: &[NoiseSpec],
    input_noise: &[NoiseSpec],
) -> Result<Var> {
    if target_noise.len() != input_noise.len() {
        return Err(Error::InvalidArgument(format!(
            "{} target noise specs for {} inputs",
            target_noise.len(),
            input_noise.len()
        )));
    }
    for (t, i) in target_noise.iter().zip(input_noise) {
        if t.seed == i.seed {
            return Err(Error::InvalidArgument(format!(
                "noisy targets reuse the input noise seed {}; the two renderings must be independent",
                i.seed
            )));
        }
    }
    loss_pd(tape, stage1, noisy_targets)
}

/// Mean squared error of the final output against the clean center frame.
pub fn loss_st(tape: &mut Tape<f32>, output: Var, clean_center: Var) -> Result<Var> {
    tape.mse(output, clean_center)
}

/// Weight `alpha / e` of the first-stage term in epoch `e` (1-based).
pub fn combined_loss_weight(epoch_index: u64, alpha: f64) -> Result<f64> {
    if epoch_index == 0 {
        return Err(Error::InvalidArgument("epoch index is 1-based; got 0".into()));
    }
    Ok(alpha / epoch_index as f64)
}

/// Mean squared error of the final output against the stage-1 estimate of
/// the center frame, which is held constant for the step.
pub fn loss_unsupervised(tape: &mut Tape<f32>, output: Var, stage1_center: Var) -> Result<Var> {
    let target = tape.detach(stage1_center);
    tape.mse(output, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn pd_offset_closed_form() {
        let mut tape = Tape::<f32>::new();
        let s = Shape::new(1, 3, 4, 4);
        let outs: Vec<Var> = (0..5).map(|_| tape.input_with_grad(Tensor::full(s, 0.6))).collect();
        let tgts: Vec<Var> = (0..5).map(|_| tape.input(Tensor::full(s, 0.5))).collect();
        let l = loss_pd(&mut tape, &outs, &tgts).unwrap();
        assert!((tape.scalar(l).unwrap() - 0.05).abs() < 1e-6);
        assert!(loss_pd(&mut tape, &outs[..4], &tgts).is_err());
    }

    #[test]
    fn jsn_rejects_shared_seed() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::zeros(Shape::new(1, 3, 2, 2)));
        let spec = NoiseSpec::awgn(0.1, 4);
        assert!(loss_pd_jsn(&mut tape, &[x], &[x], &[spec], &[spec]).is_err());
        assert!(loss_pd_jsn(&mut tape, &[x], &[x], &[spec.with_seed(5)], &[spec]).is_ok());
    }

    #[test]
    fn weight_schedule() {
        assert_eq!(combined_loss_weight(1, 1.0).unwrap(), 1.0);
        assert_eq!(combined_loss_weight(40, 1.0).unwrap(), 0.025);
        assert!(combined_loss_weight(0, 1.0).is_err());
    }

    #[test]
    fn unsupervised_target_gets_no_gradient() {
        let mut tape = Tape::<f32>::new();
        let s = Shape::new(1, 3, 2, 2);
        let center = tape.input_with_grad(Tensor::full(s, 0.2));
        let out = tape.input_with_grad(Tensor::full(s, 0.5));
        let l = loss_unsupervised(&mut tape, out, center).unwrap();
        tape.backward(l).unwrap();
        assert!(tape.grad(center).is_none_or(|g| g.iter().all(|&v| v == 0.0)));
        assert!(tape.grad(out).unwrap().iter().all(|&v| v != 0.0));
    }
}
