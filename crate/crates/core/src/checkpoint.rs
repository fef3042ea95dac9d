//! Binary parameter checkpoints with a JSON metadata sidecar.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PXCK" | version: u32 | tensor count: u32
//! per tensor: name len: u32 | name (UTF-8) | rank: u32 | dims: u32 * rank | values: f32 * prod(dims)
//! crc32 of everything above: u32
//! ```

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PXCK";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, p) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = p.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < 16 {
        return Err(Error::Format("checkpoint too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("checkpoint CRC mismatch".into()));
    }
    let mut cur = Cursor { buf: body, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("not a PXCK checkpoint".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = cur.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    if cur.pos != body.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok(store)
}

/// Path of the JSON sidecar that accompanies `checkpoint`.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn save<M: Serialize>(path: &Path, store: &ParamStore, meta: &M) -> Result<()> {
    std::fs::write(path, encode(store))?;
    let mut json = serde_json::to_string_pretty(meta)?;
    json.push('\n');
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn load<M: DeserializeOwned>(path: &Path) -> Result<(ParamStore, M)> {
    let store = decode(&std::fs::read(path)?)?;
    let meta = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    Ok((store, meta))
}
