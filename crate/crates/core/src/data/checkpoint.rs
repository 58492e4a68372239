//! Binary weight files.
//!
//! Layout (all integers little-endian): the magic `FITV`, a u32 version,
//! a u32 tensor count, then per tensor a u16 name length, the UTF-8 name,
//! a u8 rank, `rank` u32 dims and the f32 values; finally a CRC-64/XZ of
//! everything before it.
//!
//! Run metadata travels as empty rank-1 tensors named `meta/<key>/<value>`
//! and optimizer moments as `<param>/adam_m` and `<param>/adam_v`.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use crate::error::{Error, Result};
use crate::models::FitvNet;
use crate::tensor::{Parameter, Parameterized, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"FITV";
pub const CHECKPOINT_VERSION: u32 = 1;
const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    fn meta(key: &str, value: impl std::fmt::Display) -> Self {
        NamedTensor {
            name: format!("meta/{key}/{value}"),
            dims: vec![0],
            data: Vec::new(),
        }
    }

    fn from_tensor(name: String, t: &Tensor<f32>) -> Self {
        NamedTensor {
            name,
            dims: dims_of(t.shape()),
            data: t.data().to_vec(),
        }
    }
}

/// Biases (1×C×1×1) are stored with rank 1, everything else with rank 4.
fn dims_of(s: Shape) -> Vec<u32> {
    if s.n == 1 && s.h == 1 && s.w == 1 {
        vec![s.c as u32]
    } else {
        vec![s.n as u32, s.c as u32, s.h as u32, s.w as u32]
    }
}

pub fn encode_tensors(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        if !seen.insert(t.name.as_str()) {
            return Err(Error::Checkpoint(format!("duplicate tensor name `{}`", t.name)));
        }
        let name_len = u16::try_from(t.name.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name `{}` is too long", t.name)))?;
        let rank = u8::try_from(t.dims.len())
            .map_err(|_| Error::Checkpoint(format!("tensor `{}` has too many dims", t.name)))?;
        let count: usize = t.dims.iter().map(|&d| d as usize).product();
        if count != t.data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}`: dims {:?} need {count} values, got {}",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(rank);
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = CRC64.checksum(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated file while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    if bytes.len() < 4 + 4 + 4 + 8 {
        return Err(Error::Checkpoint(format!("truncated file: {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected \"FITV\"",
            &bytes[..4]
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let mut r = Reader { bytes: body, pos: 8 };
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for i in 0..count {
        let what = format!("tensor {i}");
        let name_len = u16::from_le_bytes(r.take(2, &what)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(name_len, &what)?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.take(1, &name)?[0] as usize;
        let dims = (0..rank).map(|_| r.u32(&name)).collect::<Result<Vec<_>>>()?;
        let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let len = len
            .filter(|&l| l <= (body.len() - r.pos) / 4)
            .ok_or_else(|| Error::Checkpoint(format!("truncated file while reading `{name}` values")))?;
        let data = r
            .take(len * 4, &name)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor { name, dims, data });
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} unexpected bytes after the last tensor",
            body.len() - r.pos
        )));
    }
    let actual = CRC64.checksum(body);
    if actual != stored {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored:016x}, computed {actual:016x}"
        )));
    }
    Ok(tensors)
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub variant: String,
    /// Completed epochs.
    pub epoch: u64,
    pub iteration: u64,
    pub seed: u64,
}

/// Network weights, optimizer moments and run position.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub net: FitvNet<f32>,
}

fn param_tensors(params: &[&Parameter<f32>]) -> Vec<NamedTensor> {
    let mut out = Vec::with_capacity(params.len() * 3);
    for p in params {
        out.push(NamedTensor::from_tensor(p.name.clone(), &p.value));
        out.push(NamedTensor::from_tensor(format!("{}/adam_m", p.name), &p.adam_m));
        out.push(NamedTensor::from_tensor(format!("{}/adam_v", p.name), &p.adam_v));
    }
    out
}

impl Checkpoint {
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let params = self.net.parameters();
        let steps = params.first().map_or(0, |p| p.step_count);
        let mut out = vec![
            NamedTensor::meta("variant", &self.meta.variant),
            NamedTensor::meta("epoch", self.meta.epoch),
            NamedTensor::meta("iteration", self.meta.iteration),
            NamedTensor::meta("seed", self.meta.seed),
            NamedTensor::meta("adam_steps", steps),
        ];
        out.extend(param_tensors(&params));
        out
    }

    /// Validates names and shapes against the full architecture before
    /// accepting anything.
    pub fn from_tensors(tensors: Vec<NamedTensor>) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut by_name = BTreeMap::new();
        for t in tensors {
            if let Some(rest) = t.name.strip_prefix("meta/") {
                let (k, v) = rest
                    .split_once('/')
                    .ok_or_else(|| Error::Checkpoint(format!("malformed metadata entry `{}`", t.name)))?;
                meta.insert(k.to_string(), v.to_string());
            } else if by_name.insert(t.name.clone(), t).is_some() {
                return Err(Error::Checkpoint("duplicate tensor name".into()));
            }
        }
        let field = |k: &str| -> Result<String> {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata field `{k}`")))
        };
        let number = |k: &str| -> Result<u64> {
            field(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("metadata field `{k}` is not an integer")))
        };
        let meta_out = CheckpointMeta {
            variant: field("variant")?,
            epoch: number("epoch")?,
            iteration: number("iteration")?,
            seed: number("seed")?,
        };
        let steps = number("adam_steps")?;

        let mut net = FitvNet::<f32>::zeros();
        let mut missing = Vec::new();
        for p in net.parameters_mut() {
            p.step_count = steps;
            let targets = [
                (p.name.clone(), &mut p.value),
                (format!("{}/adam_m", p.name), &mut p.adam_m),
                (format!("{}/adam_v", p.name), &mut p.adam_v),
            ];
            for (name, slot) in targets {
                let Some(t) = by_name.remove(&name) else {
                    missing.push(name);
                    continue;
                };
                let expected = dims_of(slot.shape());
                if t.dims != expected {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{name}`: expected dims {expected:?}, found {:?}",
                        t.dims
                    )));
                }
                *slot = Tensor::from_vec(slot.shape(), t.data)?;
            }
        }
        if !missing.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} tensors missing: {}",
                missing.len(),
                missing.join(", ")
            )));
        }
        if !by_name.is_empty() {
            let extra: Vec<_> = by_name.into_keys().collect();
            return Err(Error::Checkpoint(format!("unexpected tensors: {}", extra.join(", "))));
        }
        Ok(Checkpoint { meta: meta_out, net })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_tensors(&self.to_tensors())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_tensors(decode_tensors(&bytes)?)
    }
}

/// Encodes an arbitrary parameter set with the same layout, for partial
/// exports such as a spatial stage on its own.
pub fn encode_parameters(params: &[&Parameter<f32>], meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = vec![
        NamedTensor::meta("variant", &meta.variant),
        NamedTensor::meta("epoch", meta.epoch),
        NamedTensor::meta("iteration", meta.iteration),
        NamedTensor::meta("seed", meta.seed),
        NamedTensor::meta("adam_steps", params.first().map_or(0, |p| p.step_count)),
    ];
    out.extend(param_tensors(params));
    encode_tensors(&out)
}
