//! End-to-end encode, decode, training and evaluation.

mod eval;
mod report;
mod slice;
mod train;

use std::time::Instant;

pub use eval::{eval_cloud, quantize_geometry, requantize_reflectance, EvalOptions};
pub use report::{write_loss_csv, write_report_csv, RateReport, SliceReport, LOSS_HEADER, REPORT_HEADER};
pub use slice::LevelBits;
pub use train::{train, TrainOptions, TrainOutput};

use crate::entropy::{slice_checksum, BitstreamHeader, CodingMode, SliceEntry, MAX_ALPHABET};
use crate::error::{invalid, Error, Result};
use crate::hilbert::hilbert_order;
use crate::lod::{slice_points, LodParams};
use crate::model::ContextModel;
use crate::neighborhood::{InputMode, NeighborParams};
use crate::par;
use crate::pointcloud::{validate_geometry, AttributeSpace, PointCloud};
use slice::{decode_slice, encode_slice, Setup};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CodecConfig {
    pub lod: LodParams,
    /// Used in baseline mode; a model brings its own.
    pub neighbors: NeighborParams,
    /// Worker threads; `0` uses every available core.
    pub threads: usize,
}


pub struct Encoded {
    pub bytes: Vec<u8>,
    pub report: RateReport,
}

fn check_alphabet(space: AttributeSpace) -> Result<()> {
    for c in 0..space.channels() {
        let (lo, hi) = space.value_range(c);
        if (hi - lo + 1) as usize > MAX_ALPHABET {
            return invalid(format!("channel {c} alphabet of {} values is too large to range code", hi - lo + 1));
        }
    }
    Ok(())
}

/// Compresses the attributes of `cloud`. Without a model the baseline
/// predictor is used.
pub fn encode(cloud: &PointCloud, cfg: &CodecConfig, model: Option<&ContextModel>) -> Result<Encoded> {
    let start = Instant::now();
    cfg.lod.validate()?;
    let coding = cloud.to_coding_space();
    let space = coding.space();
    check_alphabet(space)?;
    let (neighbors, input_mode, mode) = match model {
        Some(m) => {
            m.check_space(space)?;
            (m.config().neighbors(), m.config().input_mode, CodingMode::Neural { checkpoint_hash: m.content_hash() })
        }
        None => {
            cfg.neighbors.validate()?;
            (cfg.neighbors, InputMode::Residual, CodingMode::Baseline)
        }
    };
    let setup = Setup { space, lod: &cfg.lod, neighbors, input_mode, model };

    let (order, hilbert) = hilbert_order(coding.positions(), coding.geom_bits())?;
    let c = space.channels();
    let coords: Vec<[u32; 3]> = order.iter().map(|&i| coding.positions()[i]).collect();
    let attrs: Vec<i32> = order.iter().flat_map(|&i| coding.attr(i).iter().copied()).collect();
    let ranges = slice_points(coords.len(), cfg.lod.slice_size);

    let slices = par::with_threads(cfg.threads, || {
        par::try_map_range(ranges.len(), |s| {
            let r = ranges[s].clone();
            encode_slice(s as u64, &coords[r.clone()], &hilbert[r.clone()], &attrs[r.start * c..r.end * c], &setup)
        })
    })?;

    let header = BitstreamHeader {
        space: cloud.space(),
        geom_bits: cloud.geom_bits(),
        points: cloud.len() as u64,
        lod: cfg.lod.clone(),
        neighbors,
        input_mode,
        mode,
        slices: slices
            .iter()
            .zip(&ranges)
            .map(|(s, r)| {
                Ok(SliceEntry {
                    payload_len: u32::try_from(s.bytes.len())
                        .map_err(|_| Error::Invalid("slice payload exceeds 4 GiB".into()))?,
                    checksum: slice_checksum(&hilbert[r.clone()]),
                })
            })
            .collect::<Result<_>>()?,
    };
    let mut bytes = header.to_bytes()?;
    let header_bytes = bytes.len();
    let mut slice_reports = Vec::with_capacity(slices.len());
    for (s, r) in slices.into_iter().zip(&ranges) {
        bytes.extend_from_slice(&s.bytes);
        slice_reports.push(SliceReport { points: r.len(), payload_bytes: s.bytes.len(), levels: s.levels });
    }
    let report = RateReport {
        points: cloud.len(),
        header_bytes,
        file_bytes: bytes.len(),
        slices: slice_reports,
        encode_s: start.elapsed().as_secs_f64(),
        decode_s: None,
    };
    Ok(Encoded { bytes, report })
}

/// Reconstructs the attributes of `positions` (in their given order).
pub fn decode(positions: &[[u32; 3]], bytes: &[u8], model: Option<&ContextModel>, threads: usize) -> Result<PointCloud> {
    let (header, payloads) = BitstreamHeader::split_stream(bytes)?;
    let space = header.space.coding_space();
    let model = match header.mode {
        CodingMode::Baseline => None,
        CodingMode::Neural { checkpoint_hash } => {
            let m = model.ok_or_else(|| Error::Integrity("stream needs the checkpoint it was coded with".into()))?;
            if m.content_hash() != checkpoint_hash {
                return Err(Error::Integrity("checkpoint hash differs from the one in the stream".into()));
            }
            m.check_space(space)?;
            Some(m)
        }
    };
    if positions.len() as u64 != header.points {
        return Err(Error::Integrity(format!(
            "geometry has {} points, stream has {}",
            positions.len(),
            header.points
        )));
    }
    validate_geometry(positions, header.geom_bits).map_err(|e| Error::Integrity(format!("geometry: {e}")))?;
    let (order, hilbert) = hilbert_order(positions, header.geom_bits)?;
    let ranges = slice_points(positions.len(), header.lod.slice_size);
    if ranges.len() != header.slices.len() {
        return Err(Error::Integrity("slice count differs from the geometry".into()));
    }
    for (i, (r, entry)) in ranges.iter().zip(&header.slices).enumerate() {
        if slice_checksum(&hilbert[r.clone()]) != entry.checksum {
            return Err(Error::Integrity(format!("geometry checksum mismatch in slice {i}")));
        }
    }
    let coords: Vec<[u32; 3]> = order.iter().map(|&i| positions[i]).collect();
    let setup = Setup {
        space,
        lod: &header.lod,
        neighbors: header.neighbors,
        input_mode: header.input_mode,
        model,
    };
    if let Some(m) = model {
        if m.config().neighbors() != header.neighbors || m.config().input_mode != header.input_mode {
            return Err(Error::Integrity("checkpoint config differs from the stream".into()));
        }
    }
    let decoded = par::with_threads(threads, || {
        par::try_map_range(ranges.len(), |s| {
            let r = ranges[s].clone();
            decode_slice(s as u64, &coords[r.clone()], &hilbert[r], payloads[s], &setup)
        })
    })?;
    let c = space.channels();
    let mut attrs = vec![0i32; positions.len() * c];
    for (s, vals) in decoded.into_iter().enumerate() {
        for (j, i) in ranges[s].clone().enumerate() {
            let dst = order[i];
            attrs[dst * c..(dst + 1) * c].copy_from_slice(&vals[j * c..(j + 1) * c]);
        }
    }
    let cloud = PointCloud::new(positions.to_vec(), attrs, space, header.geom_bits)
        .map_err(|e| Error::Desync(format!("decoded attributes are invalid: {e}")))?;
    if header.space == AttributeSpace::ColorRgb {
        cloud.to_rgb().map_err(|e| Error::Desync(format!("decoded color is invalid: {e}")))
    } else {
        Ok(cloud)
    }
}
