//! Image quality metrics on [0, 1] images: PSNR, SSIM, the average
//! deviation over-smoothness index and Sobel edge maps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{describe_mismatch, Shape, Tensor};

pub const PSNR_CAP: f64 = 120.0;
pub const PATCH: usize = 32;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape(op: &'static str, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Shape> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, describe_mismatch(a.shape(), b.shape())));
    }
    Ok(a.shape())
}

/// Mean squared error over every sample, accumulated in f64.
pub fn mse(pred: &Tensor<f32>, clean: &Tensor<f32>) -> Result<f64> {
    same_shape("mse", pred, clean)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(clean.data())
        .map(|(&p, &c)| {
            let d = p as f64 - c as f64;
            d * d
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `10 log10(1 / mse)` with peak 1; identical images give [`PSNR_CAP`].
pub fn psnr(pred: &Tensor<f32>, clean: &Tensor<f32>) -> Result<f64> {
    let m = mse(pred, clean)?;
    if m < 1e-12 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (1.0 / m).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Separable valid-mode filtering of an h×w plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11×11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03 and dynamic range 1, over valid window positions, averaged
/// across channels.
pub fn ssim(pred: &Tensor<f32>, clean: &Tensor<f32>) -> Result<f64> {
    let s = same_shape("ssim", pred, clean)?;
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            s.h, s.w
        )));
    }
    let k = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            let x: Vec<f64> = pred.plane(n, c).iter().map(|&v| v as f64).collect();
            let y: Vec<f64> = clean.plane(n, c).iter().map(|&v| v as f64).collect();
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
            let mx = filter_valid(&x, s.h, s.w, &k);
            let my = filter_valid(&y, s.h, s.w, &k);
            let sxx = filter_valid(&xx, s.h, s.w, &k);
            let syy = filter_valid(&yy, s.h, s.w, &k);
            let sxy = filter_valid(&xy, s.h, s.w, &k);
            let mut sum = 0.0;
            for i in 0..mx.len() {
                let (ux, uy) = (mx[i], my[i]);
                let vx = sxx[i] - ux * ux;
                let vy = syy[i] - uy * uy;
                let cov = sxy[i] - ux * uy;
                sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            }
            total += sum / mx.len() as f64;
        }
    }
    Ok(total / (s.n * s.c) as f64)
}

/// Channel sum of `pred - clean` as an h×w plane, plus the channel count.
/// Dividing by the count is deferred to the patch stds so that shifting
/// `pred` by a constant shifts every entry exactly.
fn diff_plane(pred: &Tensor<f32>, clean: &Tensor<f32>) -> Result<(Vec<f64>, usize, usize, f64)> {
    let s = same_shape("ad_index", pred, clean)?;
    if s.n != 1 {
        return Err(Error::shape(
            "ad_index",
            format!("expected a single image, got batch {}", s.n),
        ));
    }
    if s.h < PATCH || s.w < PATCH {
        return Err(Error::InvalidArgument(format!(
            "average deviation needs at least one {PATCH}x{PATCH} patch, got {}x{}",
            s.h, s.w
        )));
    }
    let plane = s.plane();
    let mut d = vec![0.0; plane];
    for c in 0..s.c {
        for (i, v) in d.iter_mut().enumerate() {
            *v += pred.data()[c * plane + i] as f64 - clean.data()[c * plane + i] as f64;
        }
    }
    Ok((d, s.h, s.w, s.c as f64))
}

/// Population standard deviation of the channel-mean difference over each
/// full 32×32 patch, row-major by patch, with the patch's top-left
/// (row, col).
fn patch_stds(pred: &Tensor<f32>, clean: &Tensor<f32>) -> Result<Vec<((usize, usize), f64)>> {
    let (d, h, w, channels) = diff_plane(pred, clean)?;
    let n = (PATCH * PATCH) as f64;
    let mut out = Vec::new();
    for py in 0..h / PATCH {
        for px in 0..w / PATCH {
            let (top, left) = (py * PATCH, px * PATCH);
            let cells = (0..PATCH).flat_map(|y| (0..PATCH).map(move |x| (top + y) * w + left + x));
            let mean = cells.clone().map(|i| d[i]).sum::<f64>() / n;
            let var = cells.map(|i| (d[i] - mean).powi(2)).sum::<f64>() / n;
            out.push(((top, left), var.sqrt() / channels));
        }
    }
    Ok(out)
}

fn above_mean(stds: &[((usize, usize), f64)]) -> Vec<((usize, usize), f64)> {
    let mean = stds.iter().map(|s| s.1).sum::<f64>() / stds.len() as f64;
    stds.iter().copied().filter(|s| s.1 > mean).collect()
}

/// Mean patch std over the patches whose std strictly exceeds the mean
/// patch std; 0 when none does.
pub fn ad_index(pred: &Tensor<f32>, clean: &Tensor<f32>) -> Result<f64> {
    let hot = above_mean(&patch_stds(pred, clean)?);
    if hot.is_empty() {
        return Ok(0.0);
    }
    Ok(hot.iter().map(|s| s.1).sum::<f64>() / hot.len() as f64)
}

/// Patch boxes (row, col, height, width) selected by [`ad_index`].
pub fn ad_bounding_boxes(pred: &Tensor<f32>, clean: &Tensor<f32>) -> Result<Vec<(usize, usize, usize, usize)>> {
    Ok(above_mean(&patch_stds(pred, clean)?)
        .into_iter()
        .map(|((r, c), _)| (r, c, PATCH, PATCH))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdStats {
    pub avg: f64,
    pub max: f64,
    /// Entries strictly above `avg`.
    pub count: usize,
}

pub fn ad_stats(ads: &[f64]) -> Result<AdStats> {
    if ads.is_empty() {
        return Err(Error::Empty("no AD values to summarize".into()));
    }
    let avg = ads.iter().sum::<f64>() / ads.len() as f64;
    let max = ads.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let count = ads.iter().filter(|&&a| a > avg).count();
    Ok(AdStats { avg, max, count })
}

/// Sobel gradient magnitude of the channel-mean image, scaled so its
/// maximum is 1. Borders use replicated edge pixels, so flat regions give
/// exactly zero everywhere.
pub fn sobel_magnitude(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.n != 1 {
        return Err(Error::shape(
            "sobel_magnitude",
            format!("expected a single image, got batch {}", s.n),
        ));
    }
    let (h, w) = (s.h, s.w);
    let mut gray = vec![0.0f64; h * w];
    for c in 0..s.c {
        for (g, &v) in gray.iter_mut().zip(image.plane(0, c)) {
            *g += v as f64 / s.c as f64;
        }
    }
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        gray[y * w + x]
    };
    let mut mag = vec![0.0f64; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            mag[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    let data = if max > 0.0 {
        mag.iter().map(|&m| (m / max) as f32).collect()
    } else {
        vec![0.0; h * w]
    };
    Tensor::from_vec(Shape::new(1, 1, h, w), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub ad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub ad_avg: f64,
    pub ad_max: f64,
    pub ad_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub corpus: CorpusSummary,
}

impl MetricsRow {
    pub fn measure(id: impl Into<String>, pred: &Tensor<f32>, clean: &Tensor<f32>) -> Result<Self> {
        Ok(MetricsRow {
            id: id.into(),
            psnr: psnr(pred, clean)?,
            ssim: ssim(pred, clean)?,
            ad: ad_index(pred, clean)?,
        })
    }
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<MetricsRow>) -> Result<Self> {
        let ads: Vec<f64> = rows.iter().map(|r| r.ad).collect();
        let ad = ad_stats(&ads)?;
        let n = rows.len() as f64;
        let corpus = CorpusSummary {
            psnr_mean: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim_mean: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            ad_avg: ad.avg,
            ad_max: ad.max,
            ad_count: ad.count,
        };
        Ok(MetricsReport { rows, corpus })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.id.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>7}  {:>8}",
            "frame", "PSNR(dB)", "SSIM", "AD"
        );
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:>9.3}  {:>7.4}  {:>8.5}", r.id, r.psnr, r.ssim, r.ad);
        }
        let c = &self.corpus;
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.3}  {:>7.4}  {:>8.5}",
            "mean", c.psnr_mean, c.ssim_mean, c.ad_avg
        );
        let _ = writeln!(
            out,
            "AD_avg {:.5}  AD_max {:.5}  #AD {}",
            c.ad_avg, c.ad_max, c.ad_count
        );
        out
    }
}
