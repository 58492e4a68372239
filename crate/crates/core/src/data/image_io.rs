use std::path::{Path, PathBuf};

use image::{ImageReader, RgbImage};

use super::{FrameSequence, Source};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const EXTENSIONS: [&str; 4] = ["png", "bmp", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Decodes one image as a 1×3×H×W tensor with values `byte / 255`.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    let plane = h * w;
    let data = t.data_mut();
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f32 / 255.0;
        }
    }
    Ok(t)
}

/// Loads every image of `dir` in file-name order. All frames must share
/// one size.
pub fn load_sequence(dir: &Path) -> Result<FrameSequence> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::Empty(format!("no image files in {}", dir.display())));
    }
    let mut frames = Vec::with_capacity(files.len());
    for path in &files {
        let t = load_image(path)?;
        if let Some(first) = frames.first().map(Tensor::shape) {
            if t.shape() != first {
                return Err(Error::Image {
                    path: path.clone(),
                    reason: format!(
                        "size {}x{} differs from the first frame's {}x{}",
                        t.shape().h,
                        t.shape().w,
                        first.h,
                        first.w
                    ),
                });
            }
        }
        frames.push(t);
    }
    FrameSequence::new(frames, Source::Path(dir.to_path_buf()))
}

/// Clamps to [0, 1] and rounds `x * 255` half away from zero.
pub fn quantize(x: f32) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the first batch item of a 3-channel tensor as 8-bit RGB.
/// The format follows the file extension (PNG for lossless output).
pub fn save_image(image: &Tensor<f32>, path: &Path) -> Result<()> {
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::shape("save_image", format!("expected 3 channels, got {s}")));
    }
    let plane = s.plane();
    let data = image.data();
    let mut buf = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for c in 0..3 {
            buf.push(quantize(data[c * plane + i]));
        }
    }
    let img = RgbImage::from_raw(s.w as u32, s.h as u32, buf)
        .ok_or_else(|| Error::InvalidArgument("image buffer size mismatch".into()))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}

/// Writes frames as `frame_0000.png`, `frame_0001.png`, ... under `dir`.
pub fn save_sequence(seq: &FrameSequence, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    seq.frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(format!("frame_{i:04}.png"));
            save_image(f, &path).map(|_| path)
        })
        .collect()
}
