//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   b"CEMCKPT\x01"
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON (architecture, variant, seed)
//! count        u64       number of tensors
//! repeated count times, sorted by name:
//!   name_len   u32
//!   name       name_len bytes UTF-8
//!   ndim       u32
//!   dims       ndim × u64
//!   values     product(dims) × f64 (IEEE-754 binary64, little-endian)
//! ```
//!
//! Values are stored bit-for-bit, so a save/load round trip is exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CheckpointError;
use crate::tensor::{Parameters, Tensor};

pub const MAGIC: &[u8; 8] = b"CEMCKPT\x01";

pub fn encode<H: Serialize>(header: &H, params: &Parameters) -> Result<Vec<u8>, CheckpointError> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(16 + header.len() + params.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Decode a checkpoint; the parameter set's `rng_seed` is left at 0 since the
/// seed lives in the header.
pub fn decode<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Parameters), CheckpointError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = cur.u64()? as usize;
    let header: H = serde_json::from_slice(cur.take(header_len)?)?;
    let count = cur.u64()?;
    let mut params = Parameters::empty(0);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?
            .to_string();
        let ndim = cur.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = cur.take(
            n.checked_mul(8)
                .ok_or_else(|| CheckpointError::Corrupt("size overflow".into()))?,
        )?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(name, Tensor::new(shape, values)?);
    }
    if cur.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    Ok((header, params))
}

/// Write through a temporary file and rename, so readers never see a partial file.
pub fn save<H: Serialize>(
    path: &Path,
    header: &H,
    params: &Parameters,
) -> Result<(), CheckpointError> {
    let bytes = encode(header, params)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load<H: DeserializeOwned>(path: &Path) -> Result<(H, Parameters), CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
