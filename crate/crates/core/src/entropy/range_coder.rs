//! Byte-oriented range coder with carry propagation.
//!
//! The encoder keeps a 33-bit `low` (the extra bit is the pending carry) and a
//! 32-bit `range`, renormalizing a byte at a time whenever `range` drops below
//! 2^24. A symbol with cumulative interval `[c, c + f)` out of 2^16 narrows
//! the range to `[range * c >> 16, range * (c + f) >> 16)`, so the intervals of
//! one table tile the current range exactly.
//!
//! The first output byte of this construction is always zero and is not
//! stored; flushing appends four bytes, which is the size of an empty stream.

use super::quantize::{QuantizedDistribution, FREQ_BITS};
use crate::error::{invalid, Error, Result};

const TOP: u32 = 1 << 24;

fn split(range: u32, c: u32) -> u32 {
    ((range as u64 * c as u64) >> FREQ_BITS) as u32
}

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    first: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, pending: 1, first: true, out: Vec::new() }
    }

    fn emit(&mut self, byte: u8) {
        if self.first {
            debug_assert_eq!(byte, 0);
            self.first = false;
        } else {
            self.out.push(byte);
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || self.low >> 32 != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.emit(byte.wrapping_add(carry));
                byte = 0xFF;
                self.pending -= 1;
                if self.pending == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Codes the interval `[start, start + freq)` of a 2^16 total.
    pub fn encode_interval(&mut self, start: u32, freq: u32) {
        let lo = split(self.range, start);
        let hi = split(self.range, start + freq);
        self.low += lo as u64;
        self.range = hi - lo;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode(&mut self, symbol: i32, table: &QuantizedDistribution) -> Result<()> {
        let Some((start, freq)) = table.interval(symbol) else {
            return invalid(format!(
                "symbol {symbol} outside alphabet [{}, {}]",
                table.v_min(),
                table.v_max()
            ));
        };
        self.encode_interval(start, freq);
        Ok(())
    }

    /// Bytes emitted so far, excluding the pending tail.
    pub fn bytes_written(&self) -> usize {
        self.out.len()
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        if data.len() < 4 {
            return Err(Error::Desync("range payload shorter than its flush".into()));
        }
        let code = u32::from_be_bytes(data[..4].try_into().unwrap());
        Ok(Self { data, pos: 4, code, range: u32::MAX })
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| Error::Desync("range payload exhausted early".into()))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, table: &QuantizedDistribution) -> Result<i32> {
        // Largest cumulative value c with split(range, c) <= code.
        let target = (((self.code as u64 + 1) << FREQ_BITS) - 1) / self.range as u64;
        let symbol = u32::try_from(target)
            .ok()
            .and_then(|c| table.symbol_at(c))
            .ok_or_else(|| Error::Desync("cumulative lookup outside the table".into()))?;
        let (start, freq) = table.interval(symbol).unwrap();
        let lo = split(self.range, start);
        let hi = split(self.range, start + freq);
        self.code -= lo;
        self.range = hi - lo;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(symbol)
    }

    /// Checks that the whole payload was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Desync(format!(
                "{} unread bytes after the last symbol",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Encodes `symbols[i]` with `tables[i]`.
pub fn range_encode(symbols: &[i32], tables: &[&QuantizedDistribution]) -> Result<Vec<u8>> {
    if symbols.len() != tables.len() {
        return invalid("one table per symbol required");
    }
    let mut enc = RangeEncoder::new();
    for (&s, t) in symbols.iter().zip(tables) {
        enc.encode(s, t)?;
    }
    Ok(enc.finish())
}

pub fn range_decode(payload: &[u8], tables: &[&QuantizedDistribution]) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(payload)?;
    let out = tables.iter().map(|t| dec.decode(t)).collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}
