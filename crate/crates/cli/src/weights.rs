//! LBAW weights files.
//!
//! ```text
//! magic     "LBAW"
//! version   u16
//! count     u32
//! count x { name_len u32, name (UTF-8), dtype u8, rank u8, dims u64 x rank, values }
//! ```
//!
//! All integers and values are little-endian. dtype 0 is f64; tensors are
//! written at rank 4 (n, c, h, w), and lower ranks are read with leading
//! extents of 1.

use std::path::Path;

use sodkit_core::{ParamStore, Shape, Tensor};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"LBAW";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 0;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported version {0} (expected {VERSION})")]
    UnsupportedVersion(u16),

    #[error("truncated file while reading {0}")]
    Truncated(String),

    #[error("tensor `{name}`: unsupported dtype tag {tag}")]
    UnsupportedDtype { name: String, tag: u8 },

    #[error("tensor `{name}`: unsupported rank {rank}")]
    UnsupportedRank { name: String, rank: u8 },

    #[error("tensor name is not UTF-8")]
    BadName,

    #[error("duplicate tensor `{0}`")]
    Duplicate(String),

    #[error("{0} trailing bytes after the last tensor")]
    Trailing(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, p) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        let s = p.value.shape();
        out.push(4);
        for d in [s.n, s.c, s.h, s.w] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: impl FnOnce() -> String) -> Result<&'a [u8], WeightsError> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(WeightsError::Truncated(what())),
        }
    }

    fn u8(&mut self, what: impl FnOnce() -> String) -> Result<u8, WeightsError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: impl FnOnce() -> String) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: impl FnOnce() -> String) -> Result<u64, WeightsError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore, WeightsError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, || "magic".into())?;
    if magic != MAGIC {
        return Err(WeightsError::BadMagic(magic.try_into().unwrap()));
    }
    let version = u16::from_le_bytes(r.take(2, || "version".into())?.try_into().unwrap());
    if version != VERSION {
        return Err(WeightsError::UnsupportedVersion(version));
    }
    let count = r.u32(|| "entry count".into())?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let len = r.u32(|| format!("name length of entry {i}"))? as usize;
        let name = std::str::from_utf8(r.take(len, || format!("name of entry {i}"))?)
            .map_err(|_| WeightsError::BadName)?
            .to_string();
        let tag = r.u8(|| format!("dtype of `{name}`"))?;
        if tag != DTYPE_F64 {
            return Err(WeightsError::UnsupportedDtype { name, tag });
        }
        let rank = r.u8(|| format!("rank of `{name}`"))?;
        if !(1..=4).contains(&rank) {
            return Err(WeightsError::UnsupportedRank { name, rank });
        }
        let mut dims = [1usize; 4];
        for d in &mut dims[4 - rank as usize..] {
            let v = r.u64(|| format!("dims of `{name}`"))?;
            *d = usize::try_from(v).map_err(|_| WeightsError::Truncated(format!("values of `{name}`")))?;
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| WeightsError::Truncated(format!("values of `{name}`")))?;
        let raw = r.take(numel, || format!("values of `{name}`"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::from_vec(Shape::new(dims[0], dims[1], dims[2], dims[3]), data)
            .expect("element count follows from dims");
        if store.value(&name).is_some() {
            return Err(WeightsError::Duplicate(name));
        }
        store.insert(&name, tensor);
    }
    if r.pos != bytes.len() {
        return Err(WeightsError::Trailing(bytes.len() - r.pos));
    }
    Ok(store)
}

pub fn save_weights(store: &ParamStore, path: &Path) -> Result<(), WeightsError> {
    std::fs::write(path, encode(store))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ParamStore, WeightsError> {
    decode(&std::fs::read(path)?)
}
