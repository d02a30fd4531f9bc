//! Discretized Laplace tables, range coding and the stream container.

pub mod bitstream;
pub mod laplace;
mod quantize;
mod range_coder;
mod raw;

pub use bitstream::{slice_checksum, BitstreamHeader, CodingMode, SliceEntry, FORMAT_VERSION};
pub use quantize::{laplace_bin_masses, quantize_laplace, QuantizedDistribution, FREQ_BITS, FREQ_TOTAL, MAX_ALPHABET};
pub use range_coder::{range_decode, range_encode, RangeDecoder, RangeEncoder};
pub use raw::{decode_raw_unit, encode_raw_unit, raw_unit_len};
