//! Versioned binary container of named arrays.
//!
//! Layout: magic `INPAINT\0`, format version (u32 LE), header length (u64 LE),
//! JSON header, raw little-endian array data, and a SHA-256 digest over all
//! preceding bytes.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::networks::ModelConfig;
use crate::nn::VarStore;
use crate::util::write_atomic;

pub const MAGIC: &[u8; 8] = b"INPAINT\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub iteration: u64,
    pub model: ModelConfig,
    /// Snapshot of the training configuration that produced the checkpoint.
    pub config: serde_json::Value,
    /// Parameters and optimizer moments keyed by path.
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    iteration: u64,
    model: ModelConfig,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

fn dtype_name(dtype: DType) -> Result<&'static str> {
    match dtype {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Parameter(format!("unsupported checkpoint dtype {other:?}"))),
    }
}

impl Checkpoint {
    pub fn new(iteration: u64, model: ModelConfig, config: serde_json::Value) -> Self {
        Self {
            iteration,
            model,
            config,
            tensors: BTreeMap::new(),
        }
    }

    /// Adds every variable of `store` under `prefix/`.
    pub fn insert_store(&mut self, prefix: &str, store: &VarStore) {
        for (name, var) in store.named_vars() {
            self.tensors
                .insert(format!("{prefix}/{name}"), var.as_tensor().clone());
        }
    }

    /// Tensors under `prefix/`, with the prefix stripped.
    pub fn group(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let p = format!("{prefix}/");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    pub fn has_group(&self, prefix: &str) -> bool {
        let p = format!("{prefix}/");
        self.tensors.keys().any(|k| k.starts_with(&p))
    }

    /// Loads the group `prefix` into `store`.
    pub fn restore_store(&self, prefix: &str, store: &VarStore) -> Result<()> {
        store.load(&self.group(prefix)).map_err(|e| match e {
            Error::MissingParameter(k) => Error::MissingParameter(format!("{prefix}/{k}")),
            Error::ShapeMismatch {
                key,
                found,
                expected,
            } => Error::ShapeMismatch {
                key: format!("{prefix}/{key}"),
                found,
                expected,
            },
            e => e,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut data = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let dtype = dtype_name(t.dtype())?;
            let offset = data.len();
            let flat = t.flatten_all()?;
            match t.dtype() {
                DType::F32 => flat
                    .to_vec1::<f32>()?
                    .iter()
                    .for_each(|v| data.extend_from_slice(&v.to_le_bytes())),
                _ => flat
                    .to_vec1::<f64>()?
                    .iter()
                    .for_each(|v| data.extend_from_slice(&v.to_le_bytes())),
            }
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: dtype.to_string(),
                shape: t.dims().to_vec(),
                offset,
                len: data.len() - offset,
            });
        }
        let header = serde_json::to_vec(&Header {
            iteration: self.iteration,
            model: self.model.clone(),
            config: self.config.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + data.len() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 8 + 4 + 8 + DIGEST_LEN {
            return Err(corrupt("file is truncated"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or modified file)"));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&body[20..header_end])
            .map_err(|e| corrupt(&format!("unreadable header: {e}")))?;
        let data = &body[header_end..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let raw = e
                .offset
                .checked_add(e.len)
                .and_then(|end| data.get(e.offset..end))
                .ok_or_else(|| corrupt(&format!("array `{}` lies outside the file", e.name)))?;
            let n: usize = e.shape.iter().product();
            let t = match e.dtype.as_str() {
                "f32" if raw.len() == 4 * n => {
                    let v: Vec<f32> = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect();
                    Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
                }
                "f64" if raw.len() == 8 * n => {
                    let v: Vec<f64> = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    Tensor::from_vec(v, e.shape.as_slice(), &Device::Cpu)?
                }
                _ => return Err(corrupt(&format!("array `{}` has inconsistent size or dtype", e.name))),
            };
            tensors.insert(e.name, t);
        }
        Ok(Self {
            iteration: header.iteration,
            model: header.model,
            config: header.config,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    fn sample() -> Checkpoint {
        let store = VarStore::new(DType::F32, 3);
        store.root().var("a.weight", &[2, 3], Init::Normal(1.0)).unwrap();
        store.root().var("b", &[4], Init::Uniform(1.0)).unwrap();
        let mut ck = Checkpoint::new(7, ModelConfig::desk(16, 16, 5), serde_json::json!({"k": 1}));
        ck.insert_store("gen", &store);
        ck.tensors.insert(
            "extra".into(),
            Tensor::new(&[1.5f64, -2.0], &Device::Cpu).unwrap(),
        );
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.iteration, 7);
        assert_eq!(back.model, ck.model);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.tensors.len(), ck.tensors.len());
        for (k, t) in &ck.tensors {
            let u = &back.tensors[k];
            assert_eq!(t.dims(), u.dims());
            assert_eq!(t.dtype(), u.dtype());
            let a: Vec<f64> = t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap();
            let b: Vec<f64> = u.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::CorruptCheckpoint(_))
            ));
        }
    }

    #[test]
    fn version_skew_is_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::CheckpointVersion { found, .. }) if found == FORMAT_VERSION + 1
        ));
    }

    #[test]
    fn shape_mismatch_names_first_key() {
        let ck = sample();
        let other = VarStore::new(DType::F32, 0);
        other.root().var("a.weight", &[3, 3], Init::Const(0.0)).unwrap();
        other.root().var("b", &[5], Init::Const(0.0)).unwrap();
        match ck.restore_store("gen", &other) {
            Err(Error::ShapeMismatch { key, .. }) => assert_eq!(key, "gen/a.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
