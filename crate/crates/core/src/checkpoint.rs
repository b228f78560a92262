//! Self-describing tensor container.
//!
//! Layout: the 8-byte magic `TITANCK1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then the raw little-endian tensor data in header
//! order. The header holds a `kind` string, an arbitrary `config` object and
//! one `{name, dtype, shape}` record per tensor; `dtype` is `f32` or `f64`.
//!
//! Generator checkpoints use `f32`. Training states use `f64` so a resumed
//! run continues bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Generator, GeneratorConfig};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TITANCK1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    tensors: Vec<Record>,
}

/// A decoded container.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn encode(kind: &str, config: &serde_json::Value, tensors: &[(&str, &Tensor)], dtype: DType) -> Vec<u8> {
    let header = Header {
        kind: kind.into(),
        config: config.clone(),
        tensors: tensors.iter().map(|(n, t)| Record { name: (*n).into(), dtype, shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + tensors.iter().map(|(_, t)| t.numel() * dtype.size()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for &v in t.data() {
            match dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    out
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Container> {
    let fail = |field: &str, offset: usize, reason: &str| Error::Parse {
        path: path.to_path_buf(),
        field: field.into(),
        offset: offset as u64,
        reason: reason.into(),
    };
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(fail("magic", 0, "not a checkpoint file"));
    }
    let len = bytes.get(8..16).ok_or_else(|| fail("header length", 8, "truncated"))?;
    let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
    let json = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| fail("header", 16, "truncated"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| fail("header", 16, &e.to_string()))?;
    let mut offset = 16 + len;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for rec in header.tensors {
        let n: usize = rec.shape.iter().product();
        let size = n * rec.dtype.size();
        let raw = bytes.get(offset..offset + size).ok_or_else(|| fail(&rec.name, offset, "truncated tensor data"))?;
        let data = match rec.dtype {
            DType::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
        };
        tensors.push((rec.name, Tensor::new(rec.shape, data)));
        offset += size;
    }
    if offset != bytes.len() {
        return Err(fail("trailing data", offset, "unexpected bytes after the last tensor"));
    }
    Ok(Container { kind: header.kind, config: header.config, tensors })
}

/// Writes to a sibling temporary file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

pub const GENERATOR_KIND: &str = "generator";

pub fn save_generator(path: &Path, cfg: &GeneratorConfig, params: &ParamStore) -> Result<()> {
    let config = serde_json::to_value(cfg).expect("config serializes");
    let tensors: Vec<(&str, &Tensor)> = params.iter().collect();
    write_atomic(path, &encode(GENERATOR_KIND, &config, &tensors, DType::F32))
}

/// Rebuilds the generator described by the checkpoint and loads its weights.
pub fn load_generator(path: &Path) -> Result<(Generator, ParamStore)> {
    let c = read(path)?;
    if c.kind != GENERATOR_KIND {
        return Err(Error::invalid(format!("{} holds a {} container, not a generator", path.display(), c.kind)));
    }
    let cfg: GeneratorConfig = serde_json::from_value(c.config).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        field: "config".into(),
        offset: 16,
        reason: e.to_string(),
    })?;
    let (g, mut params) = Generator::build(&cfg, 0)?;
    params.load_from(&ParamStore::from_pairs(c.tensors))?;
    Ok((g, params))
}
