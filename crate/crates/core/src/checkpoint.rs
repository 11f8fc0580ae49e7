//! Self-describing checkpoint container.
//!
//! Layout: magic `DMCK`, u32 format version, u64 header length, a UTF-8 JSON
//! header, then the tensor payload. The header carries the checkpoint kind, a
//! free-form metadata object and a directory of tensors, each with its dtype,
//! shape and byte range inside the payload. Values are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fileio::write_atomic;
use crate::nn::{Optimizer, OptimizerState, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    meta: BTreeMap<String, serde_json::Value>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
struct Stored {
    dtype: String,
    shape: Vec<usize>,
    raw: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    meta: BTreeMap<String, serde_json::Value>,
    tensors: BTreeMap<String, Stored>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            meta: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn set_meta<S: Serialize>(&mut self, key: &str, value: &S) {
        let v = serde_json::to_value(value).expect("metadata serializes");
        self.meta.insert(key.to_string(), v);
    }

    pub fn meta<D: DeserializeOwned>(&self, key: &str) -> Result<D> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Format(format!("checkpoint has no `{key}` entry")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Format(format!("checkpoint `{key}`: {e}")))
    }

    pub fn has_meta(&self, key: &str) -> bool {
        self.meta.contains_key(key)
    }

    pub fn put<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        let mut raw = Vec::with_capacity(t.len() * T::BYTES);
        for &v in t.data() {
            v.write_le(&mut raw);
        }
        self.tensors.insert(
            name.to_string(),
            Stored {
                dtype: T::DTYPE.to_string(),
                shape: t.shape().to_vec(),
                raw,
            },
        );
    }

    /// Reads a tensor, converting from the stored dtype if needed.
    pub fn get<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let s = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor `{name}`")))?;
        let data: Vec<T> = match s.dtype.as_str() {
            "f32" => s.raw.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
            "f64" => s.raw.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
            other => return Err(Error::Format(format!("tensor `{name}` has unknown dtype {other}"))),
        };
        Ok(Tensor::new(&s.shape, data))
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn put_store<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (name, t) in store.iter() {
            self.put(&format!("{prefix}{name}"), t);
        }
    }

    /// Fills every parameter of `store` from tensors named `prefix + name`.
    pub fn restore_store<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let mut loaded = Vec::with_capacity(store.len());
        for (name, _) in store.iter() {
            loaded.push((name.to_string(), self.get::<T>(&format!("{prefix}{name}"))?));
        }
        store
            .load_from(loaded.iter().map(|(n, t)| (n.as_str(), t.clone())))
            .map_err(Error::Format)
    }

    pub fn put_optimizer<T: Scalar>(&mut self, prefix: &str, opt: &Optimizer<T>, store: &ParamStore<T>) {
        let state = opt.state();
        self.set_meta(&format!("{prefix}step"), &state.step);
        for (k, slot) in opt.slot_names().iter().enumerate() {
            for (i, t) in state.slots[k].iter().enumerate() {
                if let Some(t) = t {
                    let pname = store.name(store.ids().nth(i).expect("slot index is a parameter"));
                    self.put(&format!("{prefix}{slot}.{pname}"), t);
                }
            }
        }
    }

    pub fn restore_optimizer<T: Scalar>(&self, prefix: &str, opt: &mut Optimizer<T>, store: &ParamStore<T>) -> Result<()> {
        let step: u64 = self.meta(&format!("{prefix}step"))?;
        let mut slots = Vec::with_capacity(opt.slot_names().len());
        for slot in opt.slot_names() {
            let mut v = Vec::with_capacity(store.len());
            for (pname, _) in store.iter() {
                let key = format!("{prefix}{slot}.{pname}");
                v.push(if self.tensors.contains_key(&key) {
                    Some(self.get::<T>(&key)?)
                } else {
                    None
                });
            }
            slots.push(v);
        }
        opt.restore(OptimizerState { step, slots });
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, s) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: s.dtype.clone(),
                shape: s.shape.clone(),
                offset,
                bytes: s.raw.len() as u64,
            });
            offset += s.raw.len() as u64;
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for s in self.tensors.values() {
            out.extend_from_slice(&s.raw);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format("checkpoint header truncated".into()));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| Error::Format("checkpoint header truncated".into()))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let payload = &bytes[16 + hlen..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let width = match e.dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => return Err(Error::Format(format!("tensor `{}` has unknown dtype {other}", e.name))),
            };
            let count: usize = e.shape.iter().product();
            if count * width != e.bytes as usize {
                return Err(Error::Format(format!("tensor `{}`: size does not match shape", e.name)));
            }
            let start = e.offset as usize;
            let raw = payload
                .get(start..start + e.bytes as usize)
                .ok_or_else(|| Error::Format(format!("tensor `{}` runs past the end of the file", e.name)))?;
            tensors.insert(
                e.name,
                Stored {
                    dtype: e.dtype,
                    shape: e.shape,
                    raw: raw.to_vec(),
                },
            );
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fails unless the checkpoint was written for `kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }
}
