//! Training objectives and the epoch loop.

mod eval;
mod losses;

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use eval::{eval_windows, evaluate, EvalWindow};
pub use losses::{combined_loss_weight, loss_pd, loss_pd_jsn, loss_st, loss_unsupervised};

use crate::data::{crop_window, sample_window, Checkpoint, CheckpointMeta, FrameSequence};
use crate::error::{Error, Result};
use crate::models::{FitvNet, WINDOW};
use crate::noise::{batch_noise_map, NoiseSpec};
use crate::rng::{derive_path, derive_seed, stream};
use crate::tensor::{adam_step, OptimizerConfig, Parameterized, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Final-output supervision only.
    Base,
    /// First stage additionally supervised by independently noised frames.
    Jsn,
    /// First stage additionally supervised by clean frames.
    Jsc,
    /// No clean frame reaches any loss.
    Unsupervised,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::Jsn, Variant::Jsc, Variant::Unsupervised];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Jsn => "jsn",
            Variant::Jsc => "jsc",
            Variant::Unsupervised => "unsupervised",
        }
    }

    pub fn default_alpha(self) -> f64 {
        match self {
            Variant::Unsupervised => 10.0,
            _ => 1.0,
        }
    }

    fn uses_noisy_targets(self) -> bool {
        matches!(self, Variant::Jsn | Variant::Unsupervised)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}` (base, jsn, jsc, unsupervised)")))
    }
}

/// Noise rendered onto training windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainingNoise {
    /// Gaussian with one sigma per window drawn uniformly from `[low, high]`.
    Awgn { low: f64, high: f64 },
    /// The fixed Gaussian plus salt-and-pepper mixture.
    Mixed,
}

impl Default for TrainingNoise {
    fn default() -> Self {
        TrainingNoise::Awgn {
            low: 5.0 / 255.0,
            high: 80.0 / 255.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub alpha: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub patch: usize,
    pub noise: TrainingNoise,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl TrainConfig {
    pub fn new(variant: Variant) -> Self {
        TrainConfig {
            variant,
            alpha: variant.default_alpha(),
            epochs: 40,
            batch_size: 16,
            patch: 96,
            noise: TrainingNoise::default(),
            seed: 0,
            optimizer: OptimizerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if self.patch == 0 || !self.patch.is_multiple_of(32) {
            return Err(Error::InvalidArgument(format!(
                "patch {} must be a positive multiple of 32",
                self.patch
            )));
        }
        if let TrainingNoise::Awgn { low, high } = self.noise {
            if !(low >= 0.0 && low <= high && high.is_finite()) {
                return Err(Error::InvalidArgument(format!("invalid sigma range [{low}, {high}]")));
            }
        }
        self.optimizer.validate()
    }
}

/// One optimizer step as written to the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Global 1-based step.
    pub step: u64,
    pub epoch: u64,
    /// `alpha / e`, absent when the first-stage term is not used.
    pub weight: Option<f64>,
    pub l_pd: Option<f64>,
    /// Final-output term (the stage-1 consistency term when unsupervised).
    pub l_st: f64,
    pub total: f64,
}

pub const LOSS_LOG_HEADER: &str = "step epoch weight l_pd l_st total";

impl StepRecord {
    /// Whitespace-separated fields; absent values print as `nan`.
    pub fn log_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
        format!(
            "{} {} {} {} {} {}",
            self.step,
            self.epoch,
            opt(self.weight),
            opt(self.l_pd),
            self.l_st,
            self.total
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Epoch currently being (or next to be) trained, starting at 1.
    pub epoch_index: u64,
    pub iteration: u64,
    pub net: FitvNet<f32>,
    pub history: Vec<StepRecord>,
    /// Number of clean frames handed to a loss. Always 0 when unsupervised.
    pub clean_target_reads: u64,
}

impl TrainState {
    pub fn new(net: FitvNet<f32>) -> Self {
        TrainState {
            epoch_index: 1,
            iteration: 0,
            net,
            history: Vec::new(),
            clean_target_reads: 0,
        }
    }

    pub fn fresh(seed: u64) -> Self {
        Self::new(FitvNet::build(seed))
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        TrainState {
            epoch_index: ck.meta.epoch + 1,
            iteration: ck.meta.iteration,
            net: ck.net,
            history: Vec::new(),
            clean_target_reads: 0,
        }
    }

    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                variant: config.variant.to_string(),
                epoch: self.epoch_index - 1,
                iteration: self.iteration,
                seed: config.seed,
            },
            net: self.net.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: u64,
    pub steps: Vec<StepRecord>,
    pub skipped_sequences: usize,
}

impl EpochSummary {
    pub fn mean_total(&self) -> f64 {
        self.steps.iter().map(|s| s.total).sum::<f64>() / self.steps.len().max(1) as f64
    }
}

/// A noised training window. Clean frames are kept only for variants whose
/// losses use them.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub noisy: Vec<Tensor<f32>>,
    pub noise: NoiseSpec,
    clean: Option<Vec<Tensor<f32>>>,
    noisy_targets: Option<(Vec<Tensor<f32>>, NoiseSpec)>,
}

impl TrainingSample {
    /// Noises a clean window with `noise`; variants trained on noisy targets
    /// also get a second rendering seeded with `target_seed`.
    pub fn render(variant: Variant, clean: Vec<Tensor<f32>>, noise: NoiseSpec, target_seed: u64) -> Result<Self> {
        if clean.len() != WINDOW {
            return Err(Error::InvalidArgument(format!(
                "a training window has {WINDOW} frames, got {}",
                clean.len()
            )));
        }
        let clean = FrameSequence::synthetic(clean)?;
        let noisy = noise.apply(&clean)?.frames;
        let noisy_targets = if variant.uses_noisy_targets() {
            let spec = noise.with_seed(target_seed);
            Some((spec.apply(&clean)?.frames, spec))
        } else {
            None
        };
        let clean = (variant != Variant::Unsupervised).then_some(clean.frames);
        Ok(TrainingSample {
            noisy,
            noise,
            clean,
            noisy_targets,
        })
    }
}

fn prepare_sample(config: &TrainConfig, seq: &FrameSequence, epoch: u64, slot: u64) -> Result<TrainingSample> {
    let base = derive_path(config.seed, &[epoch, slot]);
    let window = sample_window(seq, derive_seed(base, 0))?;
    let crop = crop_window(&window.frames, config.patch, derive_seed(base, 1))?;
    let noise = match config.noise {
        TrainingNoise::Awgn { low, high } => {
            let sigma = if high > low {
                stream(derive_seed(base, 2)).random_range(low..=high)
            } else {
                low
            };
            NoiseSpec::awgn(sigma, derive_seed(base, 3))
        }
        TrainingNoise::Mixed => NoiseSpec::mixed(derive_seed(base, 3)),
    };
    TrainingSample::render(config.variant, crop.frames, noise, derive_seed(base, 4))
}

fn stack_frame(batch: &[TrainingSample], pick: impl Fn(&TrainingSample) -> &Tensor<f32>) -> Result<Tensor<f32>> {
    let items: Vec<&Tensor<f32>> = batch.iter().map(pick).collect();
    Tensor::stack(&items)
}

/// The only route from a batch's clean frames to a loss; every frame handed
/// out is counted.
fn clean_target(tape: &mut Tape<f32>, reads: &mut u64, batch: &[TrainingSample], k: usize) -> Result<Var> {
    let frames = batch
        .iter()
        .map(|s| s.clean.as_ref().map(|c| &c[k]))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidArgument("sample carries no clean frames".into()))?;
    *reads += batch.len() as u64;
    Ok(tape.input(Tensor::stack(&frames)?))
}

/// One optimizer step on `batch` (all samples the same size), weighting the
/// first-stage term by the current epoch. Appends to `state.history`.
pub fn train_step(state: &mut TrainState, config: &TrainConfig, batch: &[TrainingSample]) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(Error::Empty("empty training batch".into()));
    }
    let record = train_batch(state, config, batch)?;
    debug!("{}", record.log_line());
    state.history.push(record);
    Ok(record)
}

fn train_batch(state: &mut TrainState, config: &TrainConfig, batch: &[TrainingSample]) -> Result<StepRecord> {
    let epoch = state.epoch_index;
    let weight = combined_loss_weight(epoch, config.alpha)?;
    let patch = batch[0].noisy[0].shape();

    let mut tape = Tape::<f32>::new();
    let frames = (0..WINDOW)
        .map(|k| Ok(tape.input(stack_frame(batch, |s| &s.noisy[k])?)))
        .collect::<Result<Vec<Var>>>()?;
    let sigmas: Vec<f64> = batch.iter().map(|s| s.noise.sigma).collect();
    let map = tape.input(batch_noise_map(&sigmas, patch.h, patch.w)?);
    let out = state.net.forward(&mut tape, &frames, map)?;
    let center = WINDOW / 2;

    let noisy_targets = |tape: &mut Tape<f32>| -> Result<Var> {
        let rendered: Vec<&(Vec<Tensor<f32>>, NoiseSpec)> = batch
            .iter()
            .map(|s| s.noisy_targets.as_ref().expect("rendered for this variant"))
            .collect();
        let targets = (0..WINDOW)
            .map(|k| Ok(tape.input(Tensor::stack(&rendered.iter().map(|r| &r.0[k]).collect::<Vec<_>>())?)))
            .collect::<Result<Vec<Var>>>()?;
        let target_specs: Vec<NoiseSpec> = rendered.iter().map(|r| r.1).collect();
        let input_specs: Vec<NoiseSpec> = batch.iter().map(|s| s.noise).collect();
        loss_pd_jsn(tape, &out.stage1, &targets, &target_specs, &input_specs)
    };

    let reads = &mut state.clean_target_reads;
    let (l_pd, l_main) = match config.variant {
        Variant::Base => {
            let target = clean_target(&mut tape, reads, batch, center)?;
            (None, loss_st(&mut tape, out.center, target)?)
        }
        Variant::Jsc => {
            let targets = (0..WINDOW)
                .map(|k| clean_target(&mut tape, reads, batch, k))
                .collect::<Result<Vec<_>>>()?;
            let pd = loss_pd(&mut tape, &out.stage1, &targets)?;
            let target = clean_target(&mut tape, reads, batch, center)?;
            (Some(pd), loss_st(&mut tape, out.center, target)?)
        }
        Variant::Jsn => {
            let pd = noisy_targets(&mut tape)?;
            let target = clean_target(&mut tape, reads, batch, center)?;
            (Some(pd), loss_st(&mut tape, out.center, target)?)
        }
        Variant::Unsupervised => {
            let pd = noisy_targets(&mut tape)?;
            (Some(pd), loss_unsupervised(&mut tape, out.center, out.stage1[center])?)
        }
    };
    let total = match l_pd {
        Some(pd) => {
            let weighted = tape.scale(pd, weight);
            tape.add(weighted, l_main)?
        }
        None => l_main,
    };
    let record = StepRecord {
        step: state.iteration + 1,
        epoch,
        weight: l_pd.map(|_| weight),
        l_pd: l_pd.map(|v| tape.scalar(v)).transpose()?.map(f64::from),
        l_st: tape.scalar(l_main)? as f64,
        total: tape.scalar(total)? as f64,
    };
    if !record.total.is_finite() {
        return Err(Error::NonFinite(format!("loss diverged at step {}", record.step)));
    }

    tape.backward(total)?;
    let mut params = state.net.parameters_mut();
    tape.write_param_grads(params.iter_mut().map(|p| &mut **p))?;
    drop(tape);
    for p in params {
        if p.value.grad.is_some() {
            adam_step(p, &config.optimizer)?;
        }
    }
    state.iteration += 1;
    Ok(record)
}

/// One pass over `data`: every sequence with at least five frames
/// contributes one random window per epoch, in a seeded random order, in
/// batches of `config.batch_size`. Advances `state.epoch_index`.
pub fn train_epoch(state: &mut TrainState, config: &TrainConfig, data: &[FrameSequence]) -> Result<EpochSummary> {
    config.validate()?;
    let usable: Vec<usize> = (0..data.len()).filter(|&i| data[i].len() >= WINDOW).collect();
    let skipped = data.len() - usable.len();
    if skipped > 0 {
        warn!("skipping {skipped} sequences shorter than {WINDOW} frames");
    }
    if usable.is_empty() {
        return Err(Error::Empty(
            "no sequence has enough frames for a training window".into(),
        ));
    }
    let epoch = state.epoch_index;
    let mut order = usable;
    order.shuffle(&mut stream(derive_path(config.seed, &[epoch, u64::MAX])));

    let mut steps = Vec::new();
    for (b, chunk) in order.chunks(config.batch_size).enumerate() {
        let batch = chunk
            .iter()
            .enumerate()
            .map(|(i, &si)| prepare_sample(config, &data[si], epoch, (b * config.batch_size + i) as u64))
            .collect::<Result<Vec<_>>>()?;
        steps.push(train_step(state, config, &batch)?);
    }
    state.epoch_index += 1;
    Ok(EpochSummary {
        epoch,
        steps,
        skipped_sequences: skipped,
    })
}
