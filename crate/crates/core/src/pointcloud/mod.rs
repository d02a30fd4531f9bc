//! Point cloud container, attribute alphabets and PLY input/output.

pub mod color;
pub mod ply;

use std::collections::HashSet;

use crate::error::{invalid, Result};

pub use color::{rgb_to_ycocg_r, ycocg_r_to_rgb};
pub use ply::{read_ply, read_ply_geometry, write_ply};

/// Deepest supported geometry grid; keeps Hilbert indices within 48 bits.
pub const MAX_GEOM_BITS: u8 = 16;

/// Which signal is attached to each point, and its integer alphabet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttributeSpace {
    /// 8-bit red, green, blue. Converted to YCoCg-R before coding.
    ColorRgb,
    /// Y in [0, 255], Co and Cg in [-256, 255].
    ColorYCoCg,
    /// Single channel in [0, 2^bits).
    Reflectance { bits: u8 },
}

impl AttributeSpace {
    pub fn channels(self) -> usize {
        match self {
            Self::ColorRgb | Self::ColorYCoCg => 3,
            Self::Reflectance { .. } => 1,
        }
    }

    pub fn is_color(self) -> bool {
        self.channels() == 3
    }

    /// Space in which attributes are entropy coded.
    pub fn coding_space(self) -> Self {
        match self {
            Self::ColorRgb => Self::ColorYCoCg,
            other => other,
        }
    }

    /// Inclusive value bounds of one channel.
    pub fn value_range(self, channel: usize) -> (i32, i32) {
        match (self, channel) {
            (Self::ColorRgb, _) => (0, 255),
            (Self::ColorYCoCg, 0) => color::LUMA_RANGE,
            (Self::ColorYCoCg, _) => color::CHROMA_RANGE,
            (Self::Reflectance { bits }, _) => (0, (1i32 << bits) - 1),
        }
    }

    pub fn channel_bits(self, channel: usize) -> u32 {
        match (self, channel) {
            (Self::ColorRgb, _) | (Self::ColorYCoCg, 0) => 8,
            (Self::ColorYCoCg, _) => 9,
            (Self::Reflectance { bits }, _) => bits as u32,
        }
    }

    /// Alphabet size of a channel; this is the attribute normalizer as well.
    pub fn max_attri(self, channel: usize) -> u32 {
        1 << self.channel_bits(channel)
    }

    /// Fixed offset mapping a channel value onto a non-negative coding symbol.
    pub fn symbol_offset(self, channel: usize) -> i32 {
        -self.value_range(channel).0
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Self::Reflectance { bits } if !(1..=16).contains(&bits) => {
                invalid(format!("reflectance bit depth {bits} outside 1..=16"))
            }
            _ => Ok(()),
        }
    }
}

/// Integer positions on a `2^geom_bits` grid with one attribute vector per point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointCloud {
    positions: Vec<[u32; 3]>,
    /// Flattened, `space.channels()` values per point.
    attributes: Vec<i32>,
    space: AttributeSpace,
    geom_bits: u8,
}

impl PointCloud {
    pub fn new(
        positions: Vec<[u32; 3]>,
        attributes: Vec<i32>,
        space: AttributeSpace,
        geom_bits: u8,
    ) -> Result<Self> {
        space.validate()?;
        validate_geometry(&positions, geom_bits)?;
        let channels = space.channels();
        if attributes.len() != positions.len() * channels {
            return invalid(format!(
                "{} attribute values for {} points with {channels} channels",
                attributes.len(),
                positions.len()
            ));
        }
        for (i, vals) in attributes.chunks_exact(channels).enumerate() {
            for (ch, &v) in vals.iter().enumerate() {
                let (lo, hi) = space.value_range(ch);
                if v < lo || v > hi {
                    return invalid(format!("point {i} channel {ch} value {v} outside [{lo}, {hi}]"));
                }
            }
        }
        Ok(Self { positions, attributes, space, geom_bits })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[u32; 3]] {
        &self.positions
    }

    pub fn attributes(&self) -> &[i32] {
        &self.attributes
    }

    pub fn attr(&self, i: usize) -> &[i32] {
        let c = self.space.channels();
        &self.attributes[i * c..(i + 1) * c]
    }

    pub fn space(&self) -> AttributeSpace {
        self.space
    }

    pub fn geom_bits(&self) -> u8 {
        self.geom_bits
    }

    pub fn channels(&self) -> usize {
        self.space.channels()
    }

    /// Same points in the coding space (RGB becomes YCoCg-R, others unchanged).
    pub fn to_coding_space(&self) -> Self {
        match self.space {
            AttributeSpace::ColorRgb => self.convert(AttributeSpace::ColorYCoCg, |v| {
                rgb_to_ycocg_r(v).expect("validated rgb")
            }),
            _ => self.clone(),
        }
    }

    /// Converts a YCoCg cloud back to RGB; other spaces are returned as is.
    pub fn to_rgb(&self) -> Result<Self> {
        match self.space {
            AttributeSpace::ColorYCoCg => {
                let mut attributes = Vec::with_capacity(self.attributes.len());
                for v in self.attributes.chunks_exact(3) {
                    attributes.extend(ycocg_r_to_rgb([v[0], v[1], v[2]])?);
                }
                Ok(Self { attributes, space: AttributeSpace::ColorRgb, ..self.clone() })
            }
            _ => Ok(self.clone()),
        }
    }

    fn convert(&self, space: AttributeSpace, f: impl Fn([i32; 3]) -> [i32; 3]) -> Self {
        let attributes = self
            .attributes
            .chunks_exact(3)
            .flat_map(|v| f([v[0], v[1], v[2]]))
            .collect();
        Self { attributes, space, ..self.clone() }
    }

    /// Replaces the attributes, keeping geometry; used by decoders.
    pub fn with_attributes(&self, attributes: Vec<i32>, space: AttributeSpace) -> Result<Self> {
        Self::new(self.positions.clone(), attributes, space, self.geom_bits)
    }
}

/// Checks the non-empty, in-grid, duplicate-free geometry invariants.
pub fn validate_geometry(positions: &[[u32; 3]], geom_bits: u8) -> Result<()> {
    if positions.is_empty() {
        return invalid("point cloud must contain at least one point");
    }
    if !(1..=MAX_GEOM_BITS).contains(&geom_bits) {
        return invalid(format!("geom_bits {geom_bits} outside 1..={MAX_GEOM_BITS}"));
    }
    let limit = 1u32 << geom_bits;
    let mut seen = HashSet::with_capacity(positions.len());
    for (i, p) in positions.iter().enumerate() {
        if p.iter().any(|&c| c >= limit) {
            return invalid(format!("point {i} at {p:?} outside the {geom_bits}-bit grid"));
        }
        if !seen.insert(*p) {
            return invalid(format!("duplicate point {p:?} at index {i}"));
        }
    }
    Ok(())
}

/// Smallest grid depth holding every coordinate (at least 1).
pub fn required_geom_bits(positions: &[[u32; 3]]) -> u8 {
    let max = positions.iter().flat_map(|p| p.iter().copied()).max().unwrap_or(0);
    (32 - max.leading_zeros()).max(1) as u8
}
