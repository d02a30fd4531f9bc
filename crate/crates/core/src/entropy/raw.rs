//! Fixed-width storage for the first coding unit of a slice.

use crate::error::{invalid, Error, Result};

/// Packs `values` (point-major, `channel_bits.len()` values per point) MSB
/// first. The output has `ceil(points * sum(channel_bits) / 8)` bytes.
pub fn encode_raw_unit(values: &[u32], channel_bits: &[u32]) -> Result<Vec<u8>> {
    let c = channel_bits.len();
    if c == 0 || values.len() % c != 0 {
        return invalid("values do not divide into whole points");
    }
    let total: u64 = (values.len() / c) as u64 * channel_bits.iter().map(|&b| b as u64).sum::<u64>();
    let mut out = Vec::with_capacity(total.div_ceil(8) as usize);
    let mut acc = 0u64;
    let mut nbits = 0u32;
    for (i, &v) in values.iter().enumerate() {
        let bits = channel_bits[i % c];
        if bits > 32 || (bits < 32 && v >> bits != 0) {
            return invalid(format!("value {v} does not fit in {bits} bits"));
        }
        acc = (acc << bits) | v as u64;
        nbits += bits;
        while nbits >= 8 {
            nbits -= 8;
            out.push((acc >> nbits) as u8);
        }
        acc &= (1u64 << nbits) - 1;
    }
    if nbits > 0 {
        out.push((acc << (8 - nbits)) as u8);
    }
    Ok(out)
}

/// Size in bytes of a raw unit.
pub fn raw_unit_len(points: usize, channel_bits: &[u32]) -> usize {
    (points as u64 * channel_bits.iter().map(|&b| b as u64).sum::<u64>()).div_ceil(8) as usize
}

pub fn decode_raw_unit(bytes: &[u8], points: usize, channel_bits: &[u32]) -> Result<Vec<u32>> {
    let need = raw_unit_len(points, channel_bits);
    if bytes.len() < need {
        return Err(Error::Format(format!("raw unit needs {need} bytes, got {}", bytes.len())));
    }
    let mut out = Vec::with_capacity(points * channel_bits.len());
    let mut bytes = bytes[..need].iter();
    let mut acc = 0u64;
    let mut nbits = 0u32;
    for _ in 0..points {
        for &bits in channel_bits {
            while nbits < bits {
                acc = (acc << 8) | *bytes.next().unwrap() as u64;
                nbits += 8;
            }
            nbits -= bits;
            out.push(((acc >> nbits) & ((1u64 << bits) - 1)) as u32);
            acc &= (1u64 << nbits) - 1;
        }
    }
    Ok(out)
}
