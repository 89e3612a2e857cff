//! Named-tensor container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic  "RCKP"          4 bytes
//! version u32            currently 1
//! header_len u32
//! header  JSON           { "meta": any, "tensors": [{name, dtype, shape, offset, len}] }
//! blob                   tensor elements, `offset`/`len` in bytes from blob start
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::float::{DType, Float};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RCKP";
pub const VERSION: u32 = 1;
/// Upper bound on header size accepted by the parser.
const MAX_HEADER: usize = 64 << 20;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
struct Stored {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

/// Free-form JSON metadata plus an ordered list of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    tensors: Vec<Stored>,
}

fn dtype_size(d: DType) -> usize {
    match d {
        DType::F32 => 4,
        DType::F64 => 8,
    }
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push<T: Float>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let mut bytes = Vec::with_capacity(t.len() * dtype_size(T::DTYPE));
        for &v in t.data() {
            match T::DTYPE {
                DType::F32 => bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                DType::F64 => bytes.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
        self.tensors.push(Stored {
            name: name.into(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        });
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Tensor `name`, converted to `T` if stored in the other precision.
    pub fn get<T: Float>(&self, name: &str) -> Result<Tensor<T>> {
        let s = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| NnError::Format(format!("missing tensor {name:?}")))?;
        let data: Vec<T> = match s.dtype {
            DType::F32 => s
                .bytes
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            DType::F64 => s
                .bytes
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        Tensor::new(&s.shape, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries: Vec<Entry> = self
            .tensors
            .iter()
            .map(|t| {
                let e = Entry {
                    name: t.name.clone(),
                    dtype: t.dtype,
                    shape: t.shape.clone(),
                    offset,
                    len: t.bytes.len() as u64,
                };
                offset += t.bytes.len() as u64;
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors: entries,
        })
        .expect("json value serialises");
        let mut out = Vec::with_capacity(12 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            out.extend_from_slice(&t.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| NnError::Format(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(NnError::Format(format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if header_len > MAX_HEADER || 12 + header_len > bytes.len() {
            return Err(fmt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
            .map_err(|e| NnError::Format(format!("header: {e}")))?;
        let blob = &bytes[12 + header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let elems = e
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| fmt("shape overflow"))?;
            let want = elems
                .checked_mul(dtype_size(e.dtype))
                .ok_or_else(|| fmt("shape overflow"))?;
            if want as u64 != e.len {
                return Err(NnError::Format(format!("tensor {:?}: length mismatch", e.name)));
            }
            let end = e.offset.checked_add(e.len).ok_or_else(|| fmt("offset overflow"))?;
            if end > blob.len() as u64 {
                return Err(NnError::Format(format!("tensor {:?}: out of bounds", e.name)));
            }
            tensors.push(Stored {
                name: e.name,
                dtype: e.dtype,
                shape: e.shape,
                bytes: blob[e.offset as usize..end as usize].to_vec(),
            });
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
