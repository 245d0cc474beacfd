//! The `NNCK` checkpoint format. All integers are little-endian.
//!
//! ```text
//! magic "NNCK" | u32 version (1) | u8 model kind | u32 tensor count
//! per tensor:   u16 name length | name (UTF-8) | u8 dtype (0 = f32)
//!               | u8 rank | rank × u64 dims | product(dims) × f32 payload
//! u32 metadata count
//! per entry:    u32 key length | key | u32 value length | value
//! ```
//!
//! Tensors are written in parameter-store order and metadata in key order,
//! so equal models produce equal bytes.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::models::{ModelGraph, ModelKind};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"NNCK";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic {found:?}: not a checkpoint file")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version {0} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("unknown model kind tag {0}")]
    UnknownModelKind(u8),
    #[error("tensor `{name}`: unknown dtype tag {dtype}")]
    UnknownDtype { name: String, dtype: u8 },
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("invalid UTF-8 in {0}")]
    InvalidUtf8(&'static str),
    #[error("tensor `{name}`: {detail}")]
    ShapeMismatch { name: String, detail: String },
    #[error("model expects tensor `{0}`, which the checkpoint lacks")]
    MissingTensor(String),
    #[error("checkpoint tensor `{0}` has no counterpart in the model")]
    UnexpectedTensor(String),
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
}

type CResult<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub tensors: Vec<(String, Tensor)>,
    pub metadata: BTreeMap<String, String>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
                len: self.bytes.len(),
            }),
        }
    }

    fn u8(&mut self) -> CResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> CResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> CResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> CResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize, what: &'static str) -> CResult<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| CheckpointError::InvalidUtf8(what))
    }
}

impl Checkpoint {
    /// Captures every parameter (including running statistics) and the
    /// architecture description, merged with `extra` metadata.
    pub fn from_model(model: &ModelGraph, extra: &BTreeMap<String, String>) -> Self {
        let mut metadata = model.arch_metadata();
        metadata.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        Checkpoint {
            kind: model.kind(),
            tensors: model
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
            metadata,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let too_long =
            |what: &str, len: usize| Error::invalid(format!("{what} of length {len} does not fit the format"));
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind.tag());
        let count = u32::try_from(self.tensors.len()).map_err(|_| too_long("tensor list", self.tensors.len()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| too_long("tensor name", name.len()))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(u8::try_from(t.rank()).map_err(|_| too_long("tensor rank", t.rank()))?);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mcount = u32::try_from(self.metadata.len()).map_err(|_| too_long("metadata", self.metadata.len()))?;
        out.extend_from_slice(&mcount.to_le_bytes());
        for (k, v) in &self.metadata {
            for s in [k, v] {
                let len = u32::try_from(s.len()).map_err(|_| too_long("metadata entry", s.len()))?;
                out.extend_from_slice(&len.to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> CResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4).map_err(|_| CheckpointError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        })?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic { found: magic.to_vec() });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let tag = r.u8()?;
        let kind = ModelKind::from_tag(tag).ok_or(CheckpointError::UnknownModelKind(tag))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        let mut names = HashSet::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = r.string(len, "tensor name")?;
            if !names.insert(name.clone()) {
                return Err(CheckpointError::DuplicateName(name));
            }
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(CheckpointError::UnknownDtype { name, dtype });
            }
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()?);
            }
            let numel = shape.iter().try_fold(1usize, |acc, &d| {
                usize::try_from(d).ok().and_then(|d| acc.checked_mul(d))
            });
            let byte_len = numel
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    detail: format!("declared shape {shape:?} overflows"),
                })?;
            let payload = r.take(byte_len)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let shape: Vec<usize> = shape.into_iter().map(|d| d as usize).collect();
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::ShapeMismatch {
                name: name.clone(),
                detail: e.to_string(),
            })?;
            tensors.push((name, t));
        }
        let mcount = r.u32()? as usize;
        let mut metadata = BTreeMap::new();
        for _ in 0..mcount {
            let kl = r.u32()? as usize;
            let k = r.string(kl, "metadata key")?;
            let vl = r.u32()? as usize;
            let v = r.string(vl, "metadata value")?;
            metadata.insert(k, v);
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Checkpoint {
            kind,
            tensors,
            metadata,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }

    /// Copies every tensor into `model`, which must have exactly the same
    /// names and shapes. The model is untouched on error.
    pub fn load_into(&self, model: &mut ModelGraph) -> CResult<()> {
        let have: HashSet<&str> = self.tensors.iter().map(|(n, _)| n.as_str()).collect();
        for p in model.params().iter() {
            if !have.contains(p.name.as_str()) {
                return Err(CheckpointError::MissingTensor(p.name.clone()));
            }
        }
        for (name, t) in &self.tensors {
            let p = model
                .params()
                .get(name)
                .ok_or_else(|| CheckpointError::UnexpectedTensor(name.clone()))?;
            if p.value.shape() != t.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    detail: format!("model expects {:?}, checkpoint has {:?}", p.value.shape(), t.shape()),
                });
            }
        }
        for (name, t) in &self.tensors {
            model.params_mut().get_mut(name).expect("checked above").value = t.clone();
        }
        Ok(())
    }

    /// Rebuilds the architecture from metadata and loads the tensors.
    pub fn into_model(&self) -> Result<ModelGraph> {
        let mut model = ModelGraph::from_arch_metadata(self.kind, &self.metadata)?;
        self.load_into(&mut model)?;
        Ok(model)
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save(model: &ModelGraph, path: &Path, metadata: &BTreeMap<String, String>) -> Result<()> {
    Checkpoint::from_model(model, metadata).save(path)
}

/// Returns the rebuilt model and the stored metadata.
pub fn load(path: &Path) -> Result<(ModelGraph, BTreeMap<String, String>)> {
    let ckpt = Checkpoint::read(path)?;
    let model = ckpt.into_model()?;
    Ok((model, ckpt.metadata))
}
