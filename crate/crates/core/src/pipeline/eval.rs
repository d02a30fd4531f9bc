use std::collections::HashSet;
use std::time::Instant;

use super::{decode, encode, CodecConfig, RateReport};
use crate::error::{invalid, Error, Result};
use crate::hilbert::sort_by_hilbert;
use crate::model::ContextModel;
use crate::pointcloud::{required_geom_bits, AttributeSpace, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    /// Coordinates are divided by this step before coding.
    pub quant_step: u32,
    /// Reflectance is shifted down to this many bits before coding.
    pub refl_bits: Option<u8>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { quant_step: 1, refl_bits: None }
    }
}

/// Divides coordinates by `step`. Points that collapse onto one voxel keep
/// the attribute of the first of them in Hilbert order.
pub fn quantize_geometry(cloud: &PointCloud, step: u32) -> Result<PointCloud> {
    if step == 0 {
        return invalid("quantization step must be positive");
    }
    if step == 1 {
        return Ok(cloud.clone());
    }
    let c = cloud.channels();
    let order = sort_by_hilbert(cloud.positions(), cloud.geom_bits())?;
    let mut seen = HashSet::with_capacity(cloud.len());
    let mut positions = Vec::new();
    let mut attributes = Vec::new();
    for i in order {
        let p = cloud.positions()[i].map(|v| v / step);
        if seen.insert(p) {
            positions.push(p);
            attributes.extend_from_slice(&cloud.attributes()[i * c..(i + 1) * c]);
        }
    }
    let bits = required_geom_bits(&positions).max(1);
    PointCloud::new(positions, attributes, cloud.space(), bits)
}

/// Drops low-order reflectance bits.
pub fn requantize_reflectance(cloud: &PointCloud, bits: u8) -> Result<PointCloud> {
    let AttributeSpace::Reflectance { bits: from } = cloud.space() else {
        return invalid("only reflectance can be requantized");
    };
    if bits == 0 || bits > from {
        return invalid(format!("cannot requantize {from}-bit reflectance to {bits} bits"));
    }
    let shift = from - bits;
    let attrs = cloud.attributes().iter().map(|&v| v >> shift).collect();
    cloud.with_attributes(attrs, AttributeSpace::Reflectance { bits })
}

/// Applies `opts`, encodes, decodes, and checks the round trip.
pub fn eval_cloud(
    cloud: &PointCloud,
    cfg: &CodecConfig,
    model: Option<&ContextModel>,
    opts: EvalOptions,
) -> Result<RateReport> {
    let mut pc = quantize_geometry(cloud, opts.quant_step)?;
    if let Some(bits) = opts.refl_bits {
        pc = requantize_reflectance(&pc, bits)?;
    }
    let enc = encode(&pc, cfg, model)?;
    let start = Instant::now();
    let back = decode(pc.positions(), &enc.bytes, model, cfg.threads)?;
    let decode_s = start.elapsed().as_secs_f64();
    if back != pc {
        return Err(Error::Desync("round trip changed the attributes".into()));
    }
    Ok(RateReport { decode_s: Some(decode_s), ..enc.report })
}
