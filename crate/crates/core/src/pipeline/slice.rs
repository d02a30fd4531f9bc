//! Coding of one slice: raw first unit, then range-coded refinement units.

use std::collections::HashMap;

use crate::entropy::{
    decode_raw_unit, encode_raw_unit, quantize_laplace, raw_unit_len, QuantizedDistribution, RangeDecoder,
    RangeEncoder,
};
use crate::error::{Error, Result};
use crate::hilbert::HilbertIndex;
use crate::lod::{build_lod, CodingUnit, LodParams};
use crate::model::{BaselineState, ContextModel, LaplaceParams};
use crate::neighborhood::{assemble_bundles, idw_predictions, Fixed, InputMode, KnownAttributes, NeighborParams, SliceView};
use crate::pointcloud::AttributeSpace;

const TABLE_CACHE: usize = 4096;

/// Everything both sides must agree on to produce identical tables.
#[derive(Clone, Copy)]
pub(crate) struct Setup<'a> {
    /// Coding space.
    pub space: AttributeSpace,
    pub lod: &'a LodParams,
    pub neighbors: NeighborParams,
    pub input_mode: InputMode,
    pub model: Option<&'a ContextModel>,
}

/// Ideal bits spent on one refinement level of a slice.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelBits {
    pub level: u32,
    pub points: usize,
    pub bits: f64,
}

pub(crate) struct EncodedSlice {
    pub bytes: Vec<u8>,
    pub levels: Vec<LevelBits>,
}

struct Tables {
    space: AttributeSpace,
    cache: HashMap<(usize, LaplaceParams), QuantizedDistribution>,
}

impl Tables {
    fn new(space: AttributeSpace) -> Self {
        Self { space, cache: HashMap::new() }
    }

    fn get(&mut self, channel: usize, p: LaplaceParams) -> Result<&QuantizedDistribution> {
        if self.cache.len() >= TABLE_CACHE && !self.cache.contains_key(&(channel, p)) {
            self.cache.clear();
        }
        if !self.cache.contains_key(&(channel, p)) {
            let (lo, hi) = self.space.value_range(channel);
            let t = quantize_laplace(p.mu.to_f64(), p.scale(self.space, channel), lo, hi)?;
            self.cache.insert((channel, p), t);
        }
        Ok(&self.cache[&(channel, p)])
    }
}

enum UnitParams {
    Baseline(Vec<Fixed>),
    Neural(Vec<LaplaceParams>),
}

fn unit_params(unit: &CodingUnit, view: &SliceView<'_>, setup: &Setup<'_>) -> Result<UnitParams> {
    match setup.model {
        None => Ok(UnitParams::Baseline(idw_predictions(unit, view)?)),
        Some(model) => {
            let bundle = assemble_bundles(unit, view, setup.space, &setup.neighbors, setup.input_mode)?;
            Ok(UnitParams::Neural(model.predict_params(&bundle, setup.space)?))
        }
    }
}

fn channel_bits(space: AttributeSpace) -> Vec<u32> {
    (0..space.channels()).map(|c| space.channel_bits(c)).collect()
}

fn level_slot(levels: &mut Vec<LevelBits>, level: u32) -> &mut LevelBits {
    if levels.last().map(|l| l.level) != Some(level) {
        levels.push(LevelBits { level, points: 0, bits: 0.0 });
    }
    levels.last_mut().unwrap()
}

/// Encodes one slice given its Hilbert-sorted coordinates and coding-space
/// attributes.
pub(crate) fn encode_slice(
    slice_id: u64,
    coords: &[[u32; 3]],
    hilbert: &[HilbertIndex],
    attrs: &[i32],
    setup: &Setup<'_>,
) -> Result<EncodedSlice> {
    let space = setup.space;
    let c = space.channels();
    let lod = build_lod(hilbert, setup.lod, slice_id)?;
    let mut known = vec![false; coords.len()];
    let mut levels = Vec::new();

    let first = &lod.units[0];
    let mut raw = Vec::with_capacity(first.members.len() * c);
    for &m in &first.members {
        for ch in 0..c {
            raw.push((attrs[m as usize * c + ch] + space.symbol_offset(ch)) as u32);
        }
        known[m as usize] = true;
    }
    let bits = channel_bits(space);
    let mut bytes = encode_raw_unit(&raw, &bits)?;
    let slot = level_slot(&mut levels, first.level);
    slot.points += first.members.len();
    slot.bits += (first.members.len() as u64 * bits.iter().sum::<u32>() as u64) as f64;

    let mut enc = RangeEncoder::new();
    let mut tables = Tables::new(space);
    let mut state = BaselineState::new(space);
    for unit in &lod.units[1..] {
        let view = SliceView { coords, hilbert, attrs: KnownAttributes::new(attrs, &known, c) };
        let params = unit_params(unit, &view, setup)?;
        let slot_level = unit.level;
        let mut spent = 0.0;
        for (t, &m) in unit.members.iter().enumerate() {
            let actual = &attrs[m as usize * c..(m as usize + 1) * c];
            let ps = match &params {
                UnitParams::Baseline(pred) => state.predict(&pred[t * c..(t + 1) * c], space),
                UnitParams::Neural(p) => p[t * c..(t + 1) * c].to_vec(),
            };
            for ch in 0..c {
                let table = tables.get(ch, ps[ch])?;
                enc.encode(actual[ch], table)?;
                spent += table.cost_bits(actual[ch]).unwrap();
            }
            if let UnitParams::Baseline(pred) = &params {
                state.update(actual, &pred[t * c..(t + 1) * c]);
            }
        }
        for &m in &unit.members {
            known[m as usize] = true;
        }
        let slot = level_slot(&mut levels, slot_level);
        slot.points += unit.members.len();
        slot.bits += spent;
    }
    bytes.extend(enc.finish());
    Ok(EncodedSlice { bytes, levels })
}

/// Mirrors [`encode_slice`], returning coding-space attributes in slice order.
pub(crate) fn decode_slice(
    slice_id: u64,
    coords: &[[u32; 3]],
    hilbert: &[HilbertIndex],
    payload: &[u8],
    setup: &Setup<'_>,
) -> Result<Vec<i32>> {
    let space = setup.space;
    let c = space.channels();
    let lod = build_lod(hilbert, setup.lod, slice_id)?;
    let mut known = vec![false; coords.len()];
    let mut attrs = vec![0i32; coords.len() * c];

    let first = &lod.units[0];
    let bits = channel_bits(space);
    let raw_len = raw_unit_len(first.members.len(), &bits);
    if payload.len() < raw_len {
        return Err(Error::Desync("slice payload shorter than its raw unit".into()));
    }
    let raw = decode_raw_unit(&payload[..raw_len], first.members.len(), &bits)?;
    for (i, &m) in first.members.iter().enumerate() {
        for ch in 0..c {
            attrs[m as usize * c + ch] = raw[i * c + ch] as i32 - space.symbol_offset(ch);
        }
        known[m as usize] = true;
    }

    let mut dec = RangeDecoder::new(&payload[raw_len..])?;
    let mut tables = Tables::new(space);
    let mut state = BaselineState::new(space);
    for unit in &lod.units[1..] {
        let view = SliceView { coords, hilbert, attrs: KnownAttributes::new(&attrs, &known, c) };
        let params = unit_params(unit, &view, setup)?;
        for (t, &m) in unit.members.iter().enumerate() {
            let ps = match &params {
                UnitParams::Baseline(pred) => state.predict(&pred[t * c..(t + 1) * c], space),
                UnitParams::Neural(p) => p[t * c..(t + 1) * c].to_vec(),
            };
            for ch in 0..c {
                let table = tables.get(ch, ps[ch])?;
                attrs[m as usize * c + ch] = dec.decode(table)?;
            }
            if let UnitParams::Baseline(pred) = &params {
                state.update(&attrs[m as usize * c..(m as usize + 1) * c], &pred[t * c..(t + 1) * c]);
            }
        }
        for &m in &unit.members {
            known[m as usize] = true;
        }
    }
    dec.finish()?;
    Ok(attrs)
}
