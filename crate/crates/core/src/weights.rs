//! Binary weights format.
//!
//! Layout: the 8-byte magic `MASTW001`, then per tensor a little-endian `u64`
//! name length, the UTF-8 name, a `u64` rank, `rank` extents as `u64`, and the
//! row-major values as `f64`. Tensors follow each other until end of file.

use std::fs;
use std::path::Path;

use crate::error::{MastError, Result};
use crate::kernel::Array;
use crate::net::ModelParams;

pub const MAGIC: &[u8; 8] = b"MASTW001";

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, a) in params {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(a.shape().len() as u64).to_le_bytes());
        for &e in a.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in a.data() {
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(MastError::Weights(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(MastError::Weights("bad magic, not a MASTW001 file".into()));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let mut params = ModelParams::new();
    while r.pos < bytes.len() {
        let len = r.u64("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| MastError::Weights("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u64(&format!("rank of `{name}`"))? as usize;
        if rank > 8 {
            return Err(MastError::Weights(format!("tensor `{name}` has implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64(&format!("extents of `{name}`"))? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| MastError::Weights(format!("tensor `{name}` is too large")))?;
        let raw = r.take(
            count.saturating_mul(8),
            &format!("values of `{name}`"),
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if params.contains_key(&name) {
            return Err(MastError::Weights(format!("duplicate tensor `{name}`")));
        }
        params.insert(name, Array::new(shape, data)?);
    }
    Ok(params)
}

pub fn save_weights(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ModelParams> {
    decode(&fs::read(path)?)
}
