//! Container layout of a compressed attribute stream.
//!
//! ```text
//! magic        "HAPC"
//! version      u16
//! space        u8 kind (0 rgb, 1 ycocg, 2 reflectance), u8 reflectance bits
//! geom_bits    u8
//! points       u64
//! lod          n1, growth, max_unit, max_context, slice_size: u32; seed: u64; first_point: u8
//! neighbors    k, k1, k2: u16
//! input mode   u8 (0 residual, 1 raw)
//! model        u8 (0 baseline, 1 neural), 32-byte checkpoint hash
//! slices       u32 count, then count x { payload length u32, geometry checksum u64 }
//! ```
//! Integers are little-endian. The slice payloads follow the header in order;
//! each is a raw block for the first unit followed by a range-coded payload.

use sha2::{Digest, Sha256};

use crate::error::{format_err, Error, Result};
use crate::hilbert::HilbertIndex;
use crate::lod::{FirstPoint, LodParams};
use crate::neighborhood::{InputMode, NeighborParams};
use crate::pointcloud::AttributeSpace;

pub const MAGIC: &[u8; 4] = b"HAPC";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodingMode {
    Baseline,
    Neural { checkpoint_hash: [u8; 32] },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SliceEntry {
    pub payload_len: u32,
    pub checksum: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitstreamHeader {
    /// Space of the source attributes; decoded output is returned in it.
    pub space: AttributeSpace,
    pub geom_bits: u8,
    pub points: u64,
    pub lod: LodParams,
    pub neighbors: NeighborParams,
    pub input_mode: InputMode,
    pub mode: CodingMode,
    pub slices: Vec<SliceEntry>,
}

/// Order-sensitive digest of a slice's sorted Hilbert indices.
pub fn slice_checksum(sorted_hilbert: &[HilbertIndex]) -> u64 {
    let mut h = Sha256::new();
    for &v in sorted_hilbert {
        h.update(v.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

fn u32_field(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Invalid(format!("{what} {v} does not fit the header")))
}

impl BitstreamHeader {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(96 + 12 * self.slices.len());
        out.extend_from_slice(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        let (kind, bits) = match self.space {
            AttributeSpace::ColorRgb => (0u8, 0u8),
            AttributeSpace::ColorYCoCg => (1, 0),
            AttributeSpace::Reflectance { bits } => (2, bits),
        };
        out.extend([kind, bits, self.geom_bits]);
        out.extend(self.points.to_le_bytes());
        let l = &self.lod;
        for (v, what) in [
            (l.n1, "n1"),
            (l.growth, "growth"),
            (l.max_unit, "max_unit"),
            (l.max_context, "max_context"),
            (l.slice_size, "slice_size"),
        ] {
            out.extend(u32_field(v, what)?.to_le_bytes());
        }
        out.extend(l.seed.to_le_bytes());
        out.push(match l.first_point {
            FirstPoint::Random => 0,
            FirstPoint::First => 1,
        });
        for v in [self.neighbors.k, self.neighbors.k1, self.neighbors.k2] {
            let v = u16::try_from(v).map_err(|_| Error::Invalid(format!("neighbor count {v} too large")))?;
            out.extend(v.to_le_bytes());
        }
        out.push(match self.input_mode {
            InputMode::Residual => 0,
            InputMode::Raw => 1,
        });
        match self.mode {
            CodingMode::Baseline => {
                out.push(0);
                out.extend([0u8; 32]);
            }
            CodingMode::Neural { checkpoint_hash } => {
                out.push(1);
                out.extend(checkpoint_hash);
            }
        }
        out.extend(u32_field(self.slices.len(), "slice count")?.to_le_bytes());
        for s in &self.slices {
            out.extend(s.payload_len.to_le_bytes());
            out.extend(s.checksum.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses a header and returns it with its length in bytes.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Cursor { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return format_err("not a compressed attribute stream");
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return format_err(format!("unsupported stream version {version}"));
        }
        let [kind, bits, geom_bits] = r.array()?;
        let space = match kind {
            0 => AttributeSpace::ColorRgb,
            1 => AttributeSpace::ColorYCoCg,
            2 => AttributeSpace::Reflectance { bits },
            k => return format_err(format!("unknown attribute space {k}")),
        };
        space.validate().map_err(|e| Error::Format(e.to_string()))?;
        let points = u64::from_le_bytes(r.array()?);
        let mut lod_fields = [0usize; 5];
        for f in &mut lod_fields {
            *f = u32::from_le_bytes(r.array()?) as usize;
        }
        let seed = u64::from_le_bytes(r.array()?);
        let first_point = match r.array::<1>()?[0] {
            0 => FirstPoint::Random,
            1 => FirstPoint::First,
            v => return format_err(format!("unknown first-point rule {v}")),
        };
        let [n1, growth, max_unit, max_context, slice_size] = lod_fields;
        let lod = LodParams { n1, growth, max_unit, max_context, slice_size, seed, first_point };
        lod.validate().map_err(|e| Error::Format(e.to_string()))?;
        let mut nb = [0usize; 3];
        for v in &mut nb {
            *v = u16::from_le_bytes(r.array()?) as usize;
        }
        let neighbors = NeighborParams { k: nb[0], k1: nb[1], k2: nb[2] };
        neighbors.validate().map_err(|e| Error::Format(e.to_string()))?;
        let input_mode = match r.array::<1>()?[0] {
            0 => InputMode::Residual,
            1 => InputMode::Raw,
            v => return format_err(format!("unknown input mode {v}")),
        };
        let mode_tag = r.array::<1>()?[0];
        let hash: [u8; 32] = r.array()?;
        let mode = match mode_tag {
            0 => CodingMode::Baseline,
            1 => CodingMode::Neural { checkpoint_hash: hash },
            v => return format_err(format!("unknown model mode {v}")),
        };
        let count = u32::from_le_bytes(r.array()?) as usize;
        if count > bytes.len() / 12 + 1 {
            return format_err("slice table larger than the stream");
        }
        let mut slices = Vec::with_capacity(count);
        for _ in 0..count {
            let payload_len = u32::from_le_bytes(r.array()?);
            let checksum = u64::from_le_bytes(r.array()?);
            slices.push(SliceEntry { payload_len, checksum });
        }
        let header = Self { space, geom_bits, points, lod, neighbors, input_mode, mode, slices };
        Ok((header, r.at))
    }

    /// Splits a whole stream into its header and per-slice payloads.
    pub fn split_stream(bytes: &[u8]) -> Result<(Self, Vec<&[u8]>)> {
        let (header, mut at) = Self::parse(bytes)?;
        let total: u64 = header.slices.iter().map(|s| s.payload_len as u64).sum();
        if at as u64 + total != bytes.len() as u64 {
            return format_err(format!(
                "slice table covers {total} payload bytes but {} follow the header",
                bytes.len() - at
            ));
        }
        let mut parts = Vec::with_capacity(header.slices.len());
        for s in &header.slices {
            parts.push(&bytes[at..at + s.payload_len as usize]);
            at += s.payload_len as usize;
        }
        Ok((header, parts))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return format_err("truncated stream header");
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}
