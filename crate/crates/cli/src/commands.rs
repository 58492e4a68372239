use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use serde::Serialize;

use fitv::data::{
    list_images, load_sequence, read_manifest, save_image, save_sequence, scan_entry, synth_sequence, write_manifest,
    Checkpoint, FrameSequence, ManifestEntry, SynthConfig,
};
use fitv::metrics::{ad_bounding_boxes, sobel_magnitude, CorpusSummary, MetricsReport, MetricsRow};
use fitv::noise::{NoiseKind, NoiseSpec, MIXED_SIGMA, MIXED_SP_RATIO};
use fitv::pipeline::denoise_sequence;
use fitv::train::{train_epoch, TrainConfig, TrainState, TrainingNoise};
use fitv::verify::grad_check_suite;
use fitv::{Shape, Tensor};

use crate::{AdReportArgs, DenoiseArgs, EvaluateArgs, GradCheckArgs, KindArg, SynthArgs, TrainArgs};

/// Flags take noise levels on the 0-255 scale.
const LEVEL_SCALE: f64 = 255.0;

fn print_resolved<T: Serialize>(what: &str, value: &T) -> Result<()> {
    println!("resolved {what} {}", serde_json::to_string(value)?);
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        frames: a.frames,
        height: a.size.0,
        width: a.size.1,
        object: a.object,
        velocity: a.velocity,
        contrast: a.contrast,
        seed: a.seed,
    };
    let manifest = a.manifest.clone().unwrap_or_else(|| a.out.join("manifest.jsonl"));
    let id = match &a.id {
        Some(id) => id.clone(),
        None => a
            .out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .context("cannot derive a sequence id from --out; pass --id")?,
    };
    print_resolved(
        "synth",
        &serde_json::json!({ "config": config, "manifest": manifest, "id": id }),
    )?;

    let seq = synth_sequence(&config)?;
    let files = save_sequence(&seq, &a.out)?;
    let entry = scan_entry(&id, &a.out)?;
    upsert_manifest(&manifest, entry)?;
    info!(
        "wrote {} frames to {} and recorded `{id}` in {}",
        files.len(),
        a.out.display(),
        manifest.display()
    );
    Ok(())
}

/// Adds or replaces the entry with the same id. Directories inside the
/// manifest's folder are stored relative to it.
fn upsert_manifest(path: &Path, mut entry: ManifestEntry) -> Result<()> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let mut entries = if path.exists() {
        read_manifest(path)?
    } else {
        Vec::new()
    };
    entries.retain(|e| e.id != entry.id);
    let base = parent.canonicalize()?;
    let relative = |dir: &Path| -> Result<PathBuf> {
        let abs = dir
            .canonicalize()
            .with_context(|| format!("resolving {}", dir.display()))?;
        Ok(match abs.strip_prefix(&base) {
            Ok(rel) if rel.as_os_str().is_empty() => PathBuf::from("."),
            Ok(rel) => rel.to_path_buf(),
            Err(_) => abs,
        })
    };
    for e in &mut entries {
        e.dir = relative(&e.dir)?;
    }
    entry.dir = relative(&entry.dir)?;
    entries.push(entry);
    write_manifest(path, &entries)?;
    Ok(())
}

pub fn add_noise(a: &crate::AddNoiseArgs) -> Result<()> {
    let spec = match a.kind {
        KindArg::Awgn => NoiseSpec {
            kind: NoiseKind::Awgn,
            sigma: a.sigma.unwrap_or(25.0) / LEVEL_SCALE,
            sp_ratio: a.sp_ratio.unwrap_or(0.0),
            seed: a.seed,
        },
        KindArg::Mixed => NoiseSpec {
            kind: NoiseKind::Mixed,
            sigma: a.sigma.map_or(MIXED_SIGMA, |s| s / LEVEL_SCALE),
            sp_ratio: a.sp_ratio.unwrap_or(MIXED_SP_RATIO),
            seed: a.seed,
        },
    };
    print_resolved("noise", &spec)?;
    spec.validate()?;
    let clean = load_sequence(&a.input)?;
    let noisy = spec.apply(&clean)?;
    let names = frame_names(&a.input)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (frame, name) in noisy.frames.iter().zip(&names) {
        save_image(frame, &a.out.join(format!("{name}.png")))?;
    }
    let spec_path = a.out.join("noise_spec.json");
    fs::write(&spec_path, serde_json::to_string_pretty(&spec)? + "\n")
        .with_context(|| format!("writing {}", spec_path.display()))?;
    info!("wrote {} noisy frames and {}", names.len(), spec_path.display());
    Ok(())
}

/// File stems of the images in `dir`, in load order.
fn frame_names(dir: &Path) -> Result<Vec<String>> {
    Ok(list_images(dir)?
        .iter()
        .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
        .collect())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut config = TrainConfig::new(a.variant);
    config.alpha = a.alpha.unwrap_or(config.alpha);
    config.epochs = a.epochs;
    config.batch_size = a.batch;
    config.patch = a.patch;
    config.seed = a.seed;
    config.optimizer.learning_rate = a.lr;
    config.noise = if a.mixed {
        TrainingNoise::Mixed
    } else {
        TrainingNoise::Awgn {
            low: a.sigma_range.0 / LEVEL_SCALE,
            high: a.sigma_range.1 / LEVEL_SCALE,
        }
    };
    let loss_log = a.loss_log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.txt");
        PathBuf::from(p)
    });
    print_resolved(
        "train",
        &serde_json::json!({ "config": config, "loss_log": loss_log, "resume": a.resume }),
    )?;
    config.validate()?;

    let entries = read_manifest(&a.manifest)?;
    let mut data = Vec::with_capacity(entries.len());
    for e in &entries {
        let seq = load_sequence(&e.dir).with_context(|| format!("loading sequence `{}`", e.id))?;
        if seq.len() >= 5 && seq.height().min(seq.width()) < config.patch {
            bail!(
                "sequence `{}` is {}x{}, smaller than the {p}x{p} training patch; lower --patch",
                e.id,
                seq.height(),
                seq.width(),
                p = config.patch
            );
        }
        data.push(seq);
    }

    let mut state = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ensure!(
                ck.meta.variant == config.variant.name(),
                "checkpoint was trained as `{}`, not `{}`",
                ck.meta.variant,
                config.variant
            );
            info!(
                "resuming after epoch {} (iteration {})",
                ck.meta.epoch, ck.meta.iteration
            );
            TrainState::from_checkpoint(ck)
        }
        None => TrainState::fresh(config.seed),
    };
    for path in [&a.out, &loss_log] {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume.is_some())
        .truncate(a.resume.is_none())
        .open(&loss_log)
        .with_context(|| format!("opening {}", loss_log.display()))?;

    while state.epoch_index <= config.epochs {
        let summary = train_epoch(&mut state, &config, &data)?;
        for step in &summary.steps {
            writeln!(log, "{}", step.log_line())?;
        }
        log.flush()?;
        state.checkpoint(&config).save(&a.out)?;
        info!(
            "epoch {}/{}: {} iterations, mean loss {:.6}, checkpoint {}",
            summary.epoch,
            config.epochs,
            summary.steps.len(),
            summary.mean_total(),
            a.out.display()
        );
    }
    if state.iteration == 0 || a.resume.is_some() && state.history.is_empty() {
        warn!("no epochs left to train; the checkpoint is unchanged");
    }
    info!("clean frames read by losses: {}", state.clean_target_reads);
    Ok(())
}

pub fn denoise(a: &DenoiseArgs) -> Result<()> {
    let sigma = a.sigma / LEVEL_SCALE;
    print_resolved("denoise", &serde_json::json!({ "sigma": sigma }))?;
    let ck = Checkpoint::load(&a.ckpt)?;
    let seq = load_sequence(&a.input)?;
    let names = frame_names(&a.input)?;
    let out = denoise_sequence(&ck.net, &seq, sigma, a.dump_stage1)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (frame, name) in out.frames.iter().zip(&names) {
        save_image(frame, &a.out.join(format!("{name}.png")))?;
    }
    if let Some(dumps) = &out.stage1 {
        for (window, name) in dumps.iter().zip(&names) {
            for (k, frame) in window.iter().enumerate() {
                let offset = k as isize - (window.len() / 2) as isize;
                save_image(
                    frame,
                    &a.out.join("stage1").join(name).join(format!("offset{offset:+}.png")),
                )?;
            }
        }
    }
    info!("denoised {} frames into {}", out.frames.len(), a.out.display());
    Ok(())
}

/// Loads both directories and scores them frame by frame.
fn score(pred_dir: &Path, clean_dir: &Path) -> Result<(MetricsReport, Vec<String>, FrameSequence, FrameSequence)> {
    let names = frame_names(clean_dir)?;
    let pred = load_sequence(pred_dir)?;
    let clean = load_sequence(clean_dir)?;
    ensure!(
        pred.len() == clean.len(),
        "{} has {} frames but {} has {}",
        pred_dir.display(),
        pred.len(),
        clean_dir.display(),
        clean.len()
    );
    let rows = pred
        .frames
        .iter()
        .zip(&clean.frames)
        .zip(&names)
        .map(|((p, c), name)| MetricsRow::measure(name.clone(), p, c).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    Ok((MetricsReport::from_rows(rows)?, names, pred, clean))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (report, ..) = score(&a.pred, &a.clean)?;
    if let Some(parent) = a.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.report, report.to_json()? + "\n").with_context(|| format!("writing {}", a.report.display()))?;
    println!("{}", report.table());
    Ok(())
}

#[derive(Serialize)]
struct FrameAd {
    id: String,
    ad: f64,
    /// (row, col, height, width) of every selected patch.
    boxes: Vec<(usize, usize, usize, usize)>,
}

#[derive(Serialize)]
struct AdReport {
    frames: Vec<FrameAd>,
    corpus: CorpusSummary,
}

const BOX_COLOR: [f32; 3] = [1.0, 0.0, 0.0];

fn draw_boxes(image: &Tensor<f32>, boxes: &[(usize, usize, usize, usize)]) -> Tensor<f32> {
    let mut out = image.clone();
    for &(r, c, h, w) in boxes {
        for y in r..r + h {
            for x in c..c + w {
                if y == r || y + 1 == r + h || x == c || x + 1 == c + w {
                    for (ch, &v) in BOX_COLOR.iter().enumerate() {
                        out.set(0, ch, y, x, v);
                    }
                }
            }
        }
    }
    out
}

fn gray_to_rgb(map: &Tensor<f32>) -> Tensor<f32> {
    let s = map.shape();
    Tensor::from_fn(Shape::new(1, 3, s.h, s.w), |_, _, y, x| map.at(0, 0, y, x))
}

pub fn ad_report(a: &AdReportArgs) -> Result<()> {
    let (report, names, pred, clean) = score(&a.pred, &a.clean)?;
    fs::create_dir_all(&a.boxes_out).with_context(|| format!("creating {}", a.boxes_out.display()))?;
    let mut frames = Vec::new();
    for ((p, c), (name, row)) in pred
        .frames
        .iter()
        .zip(&clean.frames)
        .zip(names.iter().zip(&report.rows))
    {
        let boxes = ad_bounding_boxes(p, c)?;
        save_image(&draw_boxes(p, &boxes), &a.boxes_out.join(format!("{name}_boxes.png")))?;
        save_image(
            &gray_to_rgb(&sobel_magnitude(p)?),
            &a.boxes_out.join(format!("{name}_sobel_pred.png")),
        )?;
        save_image(
            &gray_to_rgb(&sobel_magnitude(c)?),
            &a.boxes_out.join(format!("{name}_sobel_clean.png")),
        )?;
        frames.push(FrameAd {
            id: name.clone(),
            ad: row.ad,
            boxes,
        });
    }
    let table = report.table();
    let out = AdReport {
        frames,
        corpus: report.corpus,
    };
    let path = a.boxes_out.join("ad_report.json");
    fs::write(&path, serde_json::to_string_pretty(&out)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("{table}");
    Ok(())
}

pub fn grad_check(a: &GradCheckArgs) -> Result<()> {
    let report = grad_check_suite(a.seed, a.inject_fault)?;
    for line in report.lines() {
        println!("{line}");
    }
    println!(
        "{} checks, max relative error {:.3e}, {:.2?}",
        report.outcomes.len(),
        report.max_rel_error(),
        report.elapsed
    );
    ensure!(report.passed(), "gradient check failed");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxes_are_outlines() {
        let img = Tensor::full(Shape::new(1, 3, 64, 64), 0.5);
        let out = draw_boxes(&img, &[(32, 0, 32, 32)]);
        assert_eq!(out.at(0, 0, 32, 5), 1.0);
        assert_eq!(out.at(0, 1, 32, 5), 0.0);
        assert_eq!(out.at(0, 0, 40, 10), 0.5);
        assert_eq!(out.at(0, 0, 10, 10), 0.5);
    }
}
