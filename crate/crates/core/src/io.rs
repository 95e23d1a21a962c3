// Copyright 2026 The gancomp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Binary checkpoint format.
//!
//! Layout, all integers little-endian with no padding:
//!
//! ```text
//! "GCKP" | u32 version | u64 blob_len | blob (UTF-8 JSON) | u64 n_tensors
//! per tensor: u32 name_len | name | u32 rank | u64 dims[rank] | f32 data[..]
//! u64 FNV-1a of every preceding byte
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"GCKP";
pub const VERSION: u32 = 1;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Architecture description plus named tensors, ordered by name.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(arch: serde_json::Value) -> Self {
        Checkpoint {
            arch,
            tensors: BTreeMap::new(),
        }
    }

    /// Adds every parameter of `store` under `prefix`.
    pub fn add_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.iter() {
            let mut t = t.clone();
            t.set_requires_grad(false);
            self.tensors.insert(format!("{prefix}{name}"), t);
        }
    }

    /// Rebuilds the parameters stored under `prefix`; the names must match
    /// `expected` exactly.
    pub fn take_store(
        &self,
        prefix: &str,
        expected: &[(String, Vec<usize>)],
    ) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, shape) in expected {
            let key = format!("{prefix}{name}");
            let t = self
                .tensors
                .get(&key)
                .ok_or_else(|| Error::MissingTensor(key.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Malformed(format!(
                    "tensor {key} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            store.insert(name.clone(), t.clone());
        }
        Ok(store)
    }

    /// Errors on any stored name outside `expected`.
    pub fn check_names(&self, expected: &BTreeSet<String>) -> Result<()> {
        if let Some(missing) = expected.iter().find(|n| !self.tensors.contains_key(*n)) {
            return Err(Error::MissingTensor(missing.clone()));
        }
        if let Some(extra) = self.tensors.keys().find(|n| !expected.contains(*n)) {
            return Err(Error::UnexpectedTensor(extra.clone()));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let blob = serde_json::to_vec(&self.arch).expect("JSON values serialize");
        let mut out = Vec::with_capacity(32 + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        out.extend_from_slice(&blob);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let h = fnv1a(&out);
        out.extend_from_slice(&h.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        if bytes.len() < 4 + 4 + 8 + 8 + 8 {
            return Err(Error::Malformed(
                "file shorter than the fixed header".into(),
            ));
        }
        let body = &bytes[..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
        let computed = fnv1a(body);
        if stored != computed {
            return Err(Error::HashMismatch { stored, computed });
        }
        let mut r = Reader {
            bytes: body,
            pos: 8,
        };
        let blob_len = r.len64()?;
        let arch = serde_json::from_slice(r.take(blob_len)?)
            .map_err(|e| Error::Malformed(format!("architecture blob: {e}")))?;
        let n = r.len64()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.len64()).collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Malformed(format!("tensor {name} is too large")))?;
            let raw = r.take(
                count
                    .checked_mul(4)
                    .ok_or_else(|| Error::Malformed("size overflow".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::from_vec(dims, data)?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Malformed(format!("tensor {name} appears twice")));
            }
        }
        if r.pos != body.len() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes",
                body.len() - r.pos
            )));
        }
        Ok(Checkpoint { arch, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

/// Writes through a temporary sibling and renames, so a crash never leaves
/// a half-written file under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Malformed(format!("need {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn len64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Malformed(format!("length {v} overflows")))
    }
}
