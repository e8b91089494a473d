//! Named-tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"D3SK"  u32 version  u32 entry_count
//! per entry: u32 name_len, name (UTF-8), u32 rank, rank x u32 extents,
//!            numel x f32 payload
//! ```
//!
//! Entries are written in lexicographic name order so identical contents
//! always produce identical bytes.

use std::collections::BTreeMap;

use super::{Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"D3SK";
pub const VERSION: u32 = 1;

pub type TensorMap = BTreeMap<String, Tensor>;

pub fn encode(entries: &TensorMap) -> Vec<u8> {
    let payload: usize = entries
        .values()
        .map(|t| t.numel() * 4 + t.rank() * 4 + 8)
        .sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                TensorError::Archive(format!("truncated at byte {} (wanted {n} more)", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TensorMap, TensorError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(TensorError::Archive("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(TensorError::Archive(format!(
            "unsupported version {version}"
        )));
    }
    let count = r.u32()?;
    let mut map = TensorMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| TensorError::Archive("entry name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| TensorError::Archive("entry too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(shape, data)
            .map_err(|e| TensorError::Archive(format!("entry {name}: {e}")))?;
        if map.insert(name.clone(), tensor).is_some() {
            return Err(TensorError::Archive(format!("duplicate entry {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(TensorError::Archive(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(map)
}
