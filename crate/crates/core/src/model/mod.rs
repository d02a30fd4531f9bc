//! Per-point Laplace parameters: a two-stage vector-attention network and a
//! training-free adaptive baseline, plus their shared output quantizer.

mod baseline;
mod network;

pub use baseline::BaselineState;
pub use network::{load_checkpoint, save_checkpoint, ContextModel, RawParams};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::neighborhood::{Fixed, InputMode, NeighborParams};
use crate::pointcloud::AttributeSpace;

/// Smallest representable Laplace scale.
pub const MIN_SCALE: f64 = 0.05;
pub const SCALE_LEVELS: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of every feature vector.
    pub feature_dim: usize,
    /// Hidden width of every two-layer MLP.
    pub hidden_dim: usize,
    pub channels: usize,
    pub k: usize,
    pub k1: usize,
    pub k2: usize,
    pub input_mode: InputMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let nb = NeighborParams::default();
        Self {
            feature_dim: 64,
            hidden_dim: 64,
            channels: 1,
            k: nb.k,
            k1: nb.k1,
            k2: nb.k2,
            input_mode: InputMode::Residual,
        }
    }
}

impl ModelConfig {
    pub fn for_space(space: AttributeSpace) -> Self {
        Self { channels: space.channels(), ..Self::default() }
    }

    pub fn neighbors(&self) -> NeighborParams {
        NeighborParams { k: self.k, k1: self.k1, k2: self.k2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return invalid("model widths must be positive");
        }
        if self.channels != 1 && self.channels != 3 {
            return invalid(format!("{} channels; expected 1 or 3", self.channels));
        }
        self.neighbors().validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Log-spaced scale levels from [`MIN_SCALE`] to a channel's `max_attri`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleGrid {
    max: f64,
}

impl ScaleGrid {
    pub fn new(max_attri: u32) -> Self {
        Self { max: max_attri as f64 }
    }

    pub fn value(&self, idx: u8) -> f64 {
        let t = idx as f64 / (SCALE_LEVELS - 1) as f64;
        MIN_SCALE * (self.max / MIN_SCALE).powf(t)
    }

    /// Nearest level in log space; out-of-range and NaN inputs clamp.
    pub fn quantize(&self, b: f64) -> u8 {
        let t = (b / MIN_SCALE).ln() / (self.max / MIN_SCALE).ln() * (SCALE_LEVELS - 1) as f64;
        if t.is_nan() {
            return 0;
        }
        t.round().clamp(0.0, (SCALE_LEVELS - 1) as f64) as u8
    }
}

/// Quantized distribution parameters of one point and channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LaplaceParams {
    /// Location on the 1/64 grid, inside the channel's value range.
    pub mu: Fixed,
    pub scale_idx: u8,
}

impl LaplaceParams {
    pub fn quantize(mu: f64, b: f64, space: AttributeSpace, channel: usize) -> Self {
        let (lo, hi) = space.value_range(channel);
        let mu = if mu.is_nan() { lo as f64 } else { mu.clamp(lo as f64, hi as f64) };
        Self { mu: Fixed::from_f64(mu), scale_idx: ScaleGrid::new(space.max_attri(channel)).quantize(b) }
    }

    pub fn scale(&self, space: AttributeSpace, channel: usize) -> f64 {
        ScaleGrid::new(space.max_attri(channel)).value(self.scale_idx)
    }
}
