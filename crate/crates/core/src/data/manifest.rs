use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image_io::{list_images, load_image};
use crate::error::{Error, Result};

/// One JSON object per line. Relative `dir` values resolve against the
/// manifest's own directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub dir: PathBuf,
    pub frames: usize,
    pub h: usize,
    pub w: usize,
}

impl ManifestEntry {
    /// Checks that the directory exists and holds exactly `frames` images.
    pub fn validate(&self) -> Result<()> {
        if !self.dir.is_dir() {
            return Err(Error::Manifest(format!(
                "sequence `{}`: directory {} does not exist",
                self.id,
                self.dir.display()
            )));
        }
        let found = list_images(&self.dir)?.len();
        if found != self.frames {
            return Err(Error::Manifest(format!(
                "sequence `{}`: expected {} frames in {}, found {found}",
                self.id,
                self.frames,
                self.dir.display()
            )));
        }
        Ok(())
    }
}

/// Builds an entry by listing `dir` and reading the first frame's size.
pub fn scan_entry(id: &str, dir: &Path) -> Result<ManifestEntry> {
    let files = list_images(dir)?;
    let first = files
        .first()
        .ok_or_else(|| Error::Empty(format!("no image files in {}", dir.display())))?;
    let s = load_image(first)?.shape();
    Ok(ManifestEntry {
        id: id.to_string(),
        dir: dir.to_path_buf(),
        frames: files.len(),
        h: s.h,
        w: s.w,
    })
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Manifest(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if entry.dir.is_relative() {
            entry.dir = base.join(&entry.dir);
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{save_sequence, synth_sequence, SynthConfig};

    #[test]
    fn round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let seq = synth_sequence(&SynthConfig::default()).unwrap();
        save_sequence(&seq, &dir.path().join("s0")).unwrap();
        let mut entry = scan_entry("s0", &dir.path().join("s0")).unwrap();
        assert_eq!((entry.frames, entry.h, entry.w), (7, 64, 64));
        entry.validate().unwrap();

        entry.dir = PathBuf::from("s0");
        let mpath = dir.path().join("m.jsonl");
        write_manifest(&mpath, std::slice::from_ref(&entry)).unwrap();
        let back = read_manifest(&mpath).unwrap();
        assert_eq!(back[0].dir, dir.path().join("s0"));
        back[0].validate().unwrap();

        let wrong = ManifestEntry {
            frames: 6,
            ..back[0].clone()
        };
        assert!(wrong.validate().is_err());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("m.jsonl");
        std::fs::write(&mpath, "{\"id\":\"a\"}\n").unwrap();
        let err = read_manifest(&mpath).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
