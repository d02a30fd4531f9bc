//! Named-tensor archive used for model checkpoints.
//!
//! ```text
//! magic    "HAPCTNSR"
//! version  u32
//! manifest u32 length + UTF-8 text
//! count    u32
//! entries  count x { u16 name length, name, u8 rank, rank x u32 dims, f64 data }
//! hash     SHA-256 of every preceding byte
//! ```
//! All integers and floats are little-endian.

use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{format_err, Error, Result};

const MAGIC: &[u8; 8] = b"HAPCTNSR";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub manifest: String,
    pub tensors: Vec<(String, Tensor)>,
    pub hash: [u8; 32],
}

pub fn write_archive(manifest: &str, tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend(ARCHIVE_VERSION.to_le_bytes());
    out.extend((manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    out.extend((tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend((name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    let hash = Sha256::digest(&out);
    out.extend_from_slice(&hash);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated tensor archive".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_archive(bytes: &[u8]) -> Result<Archive> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
        return format_err("not a tensor archive");
    }
    let (body, stored) = bytes.split_at(bytes.len() - 32);
    let hash: [u8; 32] = Sha256::digest(body).into();
    if hash.as_slice() != stored {
        return Err(Error::Integrity("tensor archive content hash mismatch".into()));
    }
    let mut r = Reader { bytes: body, at: 8 };
    let version = r.u32()?;
    if version != ARCHIVE_VERSION {
        return format_err(format!("unsupported archive version {version}"));
    }
    let len = r.u32()? as usize;
    let manifest = String::from_utf8(r.take(len)?.to_vec())
        .map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.at != body.len() {
        return format_err("trailing bytes in tensor archive");
    }
    Ok(Archive { manifest, tensors, hash })
}
