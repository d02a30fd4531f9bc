//! Neighborhood assembly for the context model.
//!
//! For every target point of a coding unit:
//! - `S_m`: the `K` nearest context points, nearest first;
//! - `S'_m`: the first `K_1` of them;
//! - `S''_mk`: for each point of `S'_m`, its `K_2` nearest points inside `S_m`
//!   (itself first);
//! - the inverse-distance prediction from the first three points of `S_m`;
//! - normalized offsets and attribute residuals for both attention stages.
//!
//! Distances are exact squared integers; ties go to the smaller Hilbert index.
//! Only the prediction needs square roots, and it is rounded onto a 1/64 grid
//! so encoder and decoder agree bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hilbert::HilbertIndex;
use crate::lod::CodingUnit;
use crate::par;
use crate::pointcloud::AttributeSpace;

/// Number of neighbors feeding the inverse-distance predictor.
pub const IDW_NEIGHBORS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborParams {
    /// Context subgroup size.
    pub k: usize,
    /// Neighbor group size for stage 2.
    pub k1: usize,
    /// Per-neighbor group size for stage 1.
    pub k2: usize,
}

impl Default for NeighborParams {
    fn default() -> Self {
        Self { k: 32, k1: 8, k2: 8 }
    }
}

impl NeighborParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k1 == 0 || self.k2 == 0 {
            return invalid("neighbor counts must be positive");
        }
        if self.k1 > self.k || self.k2 > self.k {
            return invalid("k1 and k2 must not exceed k");
        }
        Ok(())
    }
}

/// What the stage-1 attribute inputs are relative to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// `(x - x_hat) / MAX`; the network output is added to `x_hat`.
    Residual,
    /// `x / MAX`; the network predicts the location directly.
    Raw,
}

/// A value on a 1/64 grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fixed(pub i64);

impl Fixed {
    pub const FRAC_BITS: u32 = 6;
    pub const SCALE: f64 = (1 << Self::FRAC_BITS) as f64;

    pub fn from_f64(v: f64) -> Self {
        Self((v * Self::SCALE).round() as i64)
    }

    pub fn from_int(v: i64) -> Self {
        Self(v << Self::FRAC_BITS)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE
    }
}

pub fn squared_distance(a: [u32; 3], b: [u32; 3]) -> u64 {
    (0..3).map(|i| (a[i] as i64 - b[i] as i64).pow(2) as u64).sum()
}

/// Attributes of a slice together with which points are already coded.
///
/// Every attribute read in bundle assembly goes through [`get`](Self::get),
/// which fails for points that a decoder would not have reconstructed yet.
pub struct KnownAttributes<'a> {
    symbols: &'a [i32],
    known: &'a [bool],
    channels: usize,
}

impl<'a> KnownAttributes<'a> {
    pub fn new(symbols: &'a [i32], known: &'a [bool], channels: usize) -> Self {
        debug_assert_eq!(symbols.len(), known.len() * channels);
        Self { symbols, known, channels }
    }

    pub fn get(&self, i: usize) -> Result<&'a [i32]> {
        if !self.known[i] {
            return Err(Error::Causality(i));
        }
        Ok(&self.symbols[i * self.channels..(i + 1) * self.channels])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
}

/// Geometry and attributes of one Hilbert-sorted slice.
pub struct SliceView<'a> {
    pub coords: &'a [[u32; 3]],
    pub hilbert: &'a [HilbertIndex],
    pub attrs: KnownAttributes<'a>,
}

fn nearest(
    target: [u32; 3],
    candidates: impl Iterator<Item = ([u32; 3], HilbertIndex)>,
    k: usize,
) -> Vec<u32> {
    let mut keyed: Vec<(u64, HilbertIndex, u32)> = candidates
        .enumerate()
        .map(|(i, (c, h))| (squared_distance(target, c), h, i as u32))
        .collect();
    let k = k.min(keyed.len());
    if k < keyed.len() {
        keyed.select_nth_unstable(k - 1);
        keyed.truncate(k);
    }
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

/// Exact `K` nearest context points per target, as indices into `context`.
pub fn knn_context(
    targets: &[[u32; 3]],
    context: &[[u32; 3]],
    context_hilbert: &[HilbertIndex],
    k: usize,
) -> Result<Vec<Vec<u32>>> {
    if context.is_empty() {
        return invalid("knn over an empty context");
    }
    if k == 0 {
        return invalid("k must be positive");
    }
    Ok(par::map_range(targets.len(), |t| {
        nearest(targets[t], context.iter().copied().zip(context_hilbert.iter().copied()), k)
    }))
}

/// Inverse-distance-weighted prediction, one value per channel.
///
/// Neighbors must not coincide with the target (points are unique).
pub fn idw_predict<'n>(
    target: [u32; 3],
    neighbors: impl IntoIterator<Item = ([u32; 3], &'n [i32])>,
    channels: usize,
) -> Vec<Fixed> {
    let mut num = vec![0.0f64; channels];
    let mut den = 0.0f64;
    for (coord, attrs) in neighbors {
        let w = 1.0 / (squared_distance(coord, target) as f64).sqrt();
        den += w;
        for (n, &a) in num.iter_mut().zip(attrs) {
            *n += w * a as f64;
        }
    }
    num.into_iter().map(|n| Fixed::from_f64(n / den)).collect()
}

/// Offsets from `center`, scaled so the farthest group member has unit norm.
pub fn normalize_coords(group: &[[u32; 3]], center: [u32; 3]) -> Vec<[f64; 3]> {
    let scale = group
        .iter()
        .map(|&z| (squared_distance(z, center) as f64).sqrt())
        .fold(0.0, f64::max);
    group
        .iter()
        .map(|z| {
            let mut out = [0.0; 3];
            if scale > 0.0 {
                for i in 0..3 {
                    out[i] = (z[i] as f64 - center[i] as f64) / scale;
                }
            }
            out
        })
        .collect()
}

/// Attribute residuals `(x - x_hat) / MAX`, channel-interleaved.
pub fn normalize_attrs(group_attrs: &[&[i32]], pred: &[Fixed], max_attri: &[u32]) -> Vec<f64> {
    group_attrs
        .iter()
        .flat_map(|x| {
            x.iter()
                .zip(pred)
                .zip(max_attri)
                .map(|((&v, p), &m)| (v as f64 - p.to_f64()) / m as f64)
        })
        .collect()
}

/// Network inputs for every target of one coding unit, flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitBundle {
    pub targets: usize,
    /// Effective `|S_m|`, `|S'_m|`, `|S''_mk|` after clamping to the context size.
    pub ks: usize,
    pub k1: usize,
    pub k2: usize,
    pub channels: usize,
    /// `targets x ks` indices into the unit's context list.
    pub neighbors: Vec<u32>,
    /// `targets x channels` inverse-distance predictions.
    pub pred: Vec<Fixed>,
    /// `targets x k1 x k2` indices into the target's `S_m` row.
    pub groups: Vec<u32>,
    /// `targets x k1 x k2 x channels` stage-1 attribute inputs.
    pub xbar: Vec<f64>,
    /// `targets x k1 x k2 x 3` stage-1 offsets, centered on each neighbor.
    pub zbar: Vec<f64>,
    /// `targets x k1 x 3` stage-2 offsets, centered on the target.
    pub zbar2: Vec<f64>,
}

impl UnitBundle {
    /// The bundle restricted to targets `range`.
    pub fn rows(&self, range: std::ops::Range<usize>) -> UnitBundle {
        let n = range.len();
        let cut = |per: usize, v: &[f64]| v[range.start * per..range.end * per].to_vec();
        let g = self.k1 * self.k2;
        UnitBundle {
            targets: n,
            ks: self.ks,
            k1: self.k1,
            k2: self.k2,
            channels: self.channels,
            neighbors: self.neighbors[range.start * self.ks..range.end * self.ks].to_vec(),
            pred: self.pred[range.start * self.channels..range.end * self.channels].to_vec(),
            groups: self.groups[range.start * g..range.end * g].to_vec(),
            xbar: cut(g * self.channels, &self.xbar),
            zbar: cut(g * 3, &self.zbar),
            zbar2: cut(self.k1 * 3, &self.zbar2),
        }
    }
}

struct TargetBundle {
    neighbors: Vec<u32>,
    pred: Vec<Fixed>,
    groups: Vec<u32>,
    xbar: Vec<f64>,
    zbar: Vec<f64>,
    zbar2: Vec<f64>,
}

/// Unit-level normalizers of the coding space, one per channel.
pub fn max_attri(space: AttributeSpace) -> Vec<u32> {
    (0..space.channels()).map(|c| space.max_attri(c)).collect()
}

/// Builds the bundle of every target in `unit`, reading only context attributes.
pub fn assemble_bundles(
    unit: &CodingUnit,
    slice: &SliceView<'_>,
    space: AttributeSpace,
    params: &NeighborParams,
    mode: InputMode,
) -> Result<UnitBundle> {
    params.validate()?;
    if unit.context.is_empty() {
        return invalid("bundle assembly needs a non-empty context group");
    }
    let channels = space.channels();
    let maxes = max_attri(space);
    let ctx_coords: Vec<[u32; 3]> = unit.context.iter().map(|&i| slice.coords[i as usize]).collect();
    let ctx_hilbert: Vec<HilbertIndex> = unit.context.iter().map(|&i| slice.hilbert[i as usize]).collect();
    let ctx_attrs: Vec<&[i32]> =
        unit.context.iter().map(|&i| slice.attrs.get(i as usize)).collect::<Result<_>>()?;

    let ks = params.k.min(ctx_coords.len());
    let k1 = params.k1.min(ks);
    let k2 = params.k2.min(ks);

    let per_target = par::map_range(unit.members.len(), |t| {
        let target = slice.coords[unit.members[t] as usize];
        let s_m = nearest(target, ctx_coords.iter().copied().zip(ctx_hilbert.iter().copied()), ks);
        let pred = idw_predict(
            target,
            s_m.iter().take(IDW_NEIGHBORS).map(|&j| (ctx_coords[j as usize], ctx_attrs[j as usize])),
            channels,
        );
        let sm_coords: Vec<[u32; 3]> = s_m.iter().map(|&j| ctx_coords[j as usize]).collect();
        let sm_hilbert: Vec<HilbertIndex> = s_m.iter().map(|&j| ctx_hilbert[j as usize]).collect();

        let mut groups = Vec::with_capacity(k1 * k2);
        let mut xbar = Vec::with_capacity(k1 * k2 * channels);
        let mut zbar = Vec::with_capacity(k1 * k2 * 3);
        for &center in &sm_coords[..k1] {
            let group = nearest(center, sm_coords.iter().copied().zip(sm_hilbert.iter().copied()), k2);
            let coords: Vec<[u32; 3]> = group.iter().map(|&g| sm_coords[g as usize]).collect();
            zbar.extend(normalize_coords(&coords, center).into_iter().flatten());
            let attrs: Vec<&[i32]> = group.iter().map(|&g| ctx_attrs[s_m[g as usize] as usize]).collect();
            match mode {
                InputMode::Residual => xbar.extend(normalize_attrs(&attrs, &pred, &maxes)),
                InputMode::Raw => {
                    let zero = vec![Fixed(0); channels];
                    xbar.extend(normalize_attrs(&attrs, &zero, &maxes))
                }
            }
            groups.extend(group);
        }
        let zbar2 = normalize_coords(&sm_coords[..k1], target).into_iter().flatten().collect();
        TargetBundle { neighbors: s_m, pred, groups, xbar, zbar, zbar2 }
    });

    let mut bundle = UnitBundle {
        targets: unit.members.len(),
        ks,
        k1,
        k2,
        channels,
        neighbors: Vec::with_capacity(unit.members.len() * ks),
        pred: Vec::with_capacity(unit.members.len() * channels),
        groups: Vec::new(),
        xbar: Vec::new(),
        zbar: Vec::new(),
        zbar2: Vec::new(),
    };
    for t in per_target {
        bundle.neighbors.extend(t.neighbors);
        bundle.pred.extend(t.pred);
        bundle.groups.extend(t.groups);
        bundle.xbar.extend(t.xbar);
        bundle.zbar.extend(t.zbar);
        bundle.zbar2.extend(t.zbar2);
    }
    Ok(bundle)
}

/// Inverse-distance predictions alone, for the training-free baseline.
pub fn idw_predictions(unit: &CodingUnit, slice: &SliceView<'_>) -> Result<Vec<Fixed>> {
    if unit.context.is_empty() {
        return invalid("prediction needs a non-empty context group");
    }
    let channels = slice.attrs.channels();
    let ctx_coords: Vec<[u32; 3]> = unit.context.iter().map(|&i| slice.coords[i as usize]).collect();
    let ctx_hilbert: Vec<HilbertIndex> = unit.context.iter().map(|&i| slice.hilbert[i as usize]).collect();
    let ctx_attrs: Vec<&[i32]> =
        unit.context.iter().map(|&i| slice.attrs.get(i as usize)).collect::<Result<_>>()?;
    let per_target = par::map_range(unit.members.len(), |t| {
        let target = slice.coords[unit.members[t] as usize];
        let near = nearest(
            target,
            ctx_coords.iter().copied().zip(ctx_hilbert.iter().copied()),
            IDW_NEIGHBORS,
        );
        idw_predict(target, near.iter().map(|&j| (ctx_coords[j as usize], ctx_attrs[j as usize])), channels)
    });
    Ok(per_target.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::hilbert_index;
    use rand::{Rng, SeedableRng};

    fn brute_knn(target: [u32; 3], ctx: &[[u32; 3]], h: &[u64], k: usize) -> Vec<u32> {
        let mut all: Vec<u32> = (0..ctx.len() as u32).collect();
        all.sort_by(|&a, &b| {
            let da = squared_distance(target, ctx[a as usize]);
            let db = squared_distance(target, ctx[b as usize]);
            da.cmp(&db).then(h[a as usize].cmp(&h[b as usize]))
        });
        all.truncate(k);
        all
    }

    #[test]
    fn knn_examples() {
        let ctx = [[1, 0, 0], [0, 3, 0], [2, 2, 2]];
        let h: Vec<u64> = ctx.iter().map(|&c| hilbert_index(c, 4).unwrap()).collect();
        // d2 = 1, 9, 12
        assert_eq!(knn_context(&[[0, 0, 0]], &ctx, &h, 2).unwrap(), vec![vec![0, 1]]);
        assert_eq!(knn_context(&[[0, 0, 0]], &ctx, &h, 3).unwrap(), vec![vec![0, 1, 2]]);
        assert_eq!(knn_context(&[[5, 5, 5]], &ctx[..1], &h[..1], 32).unwrap(), vec![vec![0]]);
        assert!(knn_context(&[[0, 0, 0]], &[], &[], 2).is_err());

        // Equidistant: smaller Hilbert index wins.
        let ctx = [[2, 1, 1], [0, 1, 1]];
        let h: Vec<u64> = ctx.iter().map(|&c| hilbert_index(c, 4).unwrap()).collect();
        let got = knn_context(&[[1, 1, 1]], &ctx, &h, 1).unwrap();
        let want = if h[0] < h[1] { 0 } else { 1 };
        assert_eq!(got, vec![vec![want]]);
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..300);
            let mut set = std::collections::HashSet::new();
            while set.len() < n + 20 {
                set.insert([rng.random_range(0..16), rng.random_range(0..16), rng.random_range(0..16)]);
            }
            let pts: Vec<[u32; 3]> = set.into_iter().collect();
            let (ctx, targets) = pts.split_at(n);
            let h: Vec<u64> = ctx.iter().map(|&c| hilbert_index(c, 4).unwrap()).collect();
            let k = rng.random_range(1..40);
            let got = knn_context(targets, ctx, &h, k).unwrap();
            for (t, g) in targets.iter().zip(got) {
                assert_eq!(g, brute_knn(*t, ctx, &h, k));
            }
        }
    }

    #[test]
    fn idw_examples() {
        let t = [0, 0, 0];
        let p = idw_predict(t, [([1, 0, 0], &[10][..]), ([0, 1, 0], &[20][..]), ([0, 0, 1], &[30][..])], 1);
        assert_eq!(p, vec![Fixed::from_int(20)]);
        // Distances 1, 2, 2 and attributes 8, 2, 2: (8 + 0.5*2 + 0.5*2) / 2 = 5.
        let p = idw_predict(t, [([1, 0, 0], &[8][..]), ([0, 2, 0], &[2][..]), ([0, 0, 2], &[2][..])], 1);
        assert_eq!(p, vec![Fixed::from_int(5)]);
        let p = idw_predict(t, [([3, 4, 0], &[7][..])], 1);
        assert_eq!(p, vec![Fixed::from_int(7)]);
    }

    #[test]
    fn idw_is_interpolatory() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let t = [50, 50, 50];
            let nb: Vec<([u32; 3], Vec<i32>)> = (0..3)
                .map(|_| {
                    let c = [rng.random_range(0..40), rng.random_range(0..100), rng.random_range(0..100)];
                    (c, vec![rng.random_range(0..256)])
                })
                .collect();
            let p = idw_predict(t, nb.iter().map(|(c, a)| (*c, a.as_slice())), 1)[0];
            let lo = nb.iter().map(|n| n.1[0]).min().unwrap() as i64;
            let hi = nb.iter().map(|n| n.1[0]).max().unwrap() as i64;
            assert!(Fixed::from_int(lo) <= p && p <= Fixed::from_int(hi));
        }
    }

    #[test]
    fn coordinate_normalization() {
        let z = normalize_coords(&[[0, 0, 0], [2, 0, 0], [0, 1, 0]], [0, 0, 0]);
        assert_eq!(z, vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.5, 0.0]]);
        assert_eq!(normalize_coords(&[[3, 3, 3]], [3, 3, 3]), vec![[0.0; 3]]);
    }

    #[test]
    fn attribute_normalization() {
        let p = [Fixed::from_int(7)];
        assert_eq!(normalize_attrs(&[&[7]], &p, &[256]), vec![0.0]);
        assert_eq!(normalize_attrs(&[&[255]], &[Fixed(0)], &[256]), vec![255.0 / 256.0]);
        assert_eq!(normalize_attrs(&[&[128]], &[Fixed::from_int(64)], &[256]), vec![0.25]);
    }

    fn random_slice(n: usize, seed: u64) -> (Vec<[u32; 3]>, Vec<u64>, Vec<i32>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut set = std::collections::HashSet::new();
        while set.len() < n {
            set.insert([rng.random_range(0..64), rng.random_range(0..64), rng.random_range(0..64)]);
        }
        let mut pts: Vec<[u32; 3]> = set.into_iter().collect();
        pts.sort_by_key(|&p| hilbert_index(p, 6).unwrap());
        let h = pts.iter().map(|&p| hilbert_index(p, 6).unwrap()).collect();
        let attrs = (0..n).map(|_| rng.random_range(0..256)).collect();
        (pts, h, attrs)
    }

    #[test]
    fn bundles_clamp_to_small_context() {
        let (pts, h, attrs) = random_slice(8, 2);
        let mut known = vec![false; 8];
        known[..5].fill(true);
        let view = SliceView { coords: &pts, hilbert: &h, attrs: KnownAttributes::new(&attrs, &known, 1) };
        let unit = CodingUnit { level: 2, sublevel: 0, members: vec![5, 6, 7], context: vec![0, 1, 2, 3, 4] };
        let space = AttributeSpace::Reflectance { bits: 8 };
        let b = assemble_bundles(&unit, &view, space, &NeighborParams::default(), InputMode::Residual).unwrap();
        assert_eq!((b.ks, b.k1, b.k2), (5, 5, 5));
        assert_eq!(b.xbar.len(), 3 * 25);
        for t in 0..3 {
            for k in 0..5 {
                // Slot 0 of every group is the neighbor itself.
                assert_eq!(b.groups[(t * 5 + k) * 5], k as u32);
            }
        }
    }

    #[test]
    fn bundles_match_brute_force() {
        let (pts, h, attrs) = random_slice(400, 3);
        let mut known = vec![false; 400];
        known[..300].fill(true);
        let view = SliceView { coords: &pts, hilbert: &h, attrs: KnownAttributes::new(&attrs, &known, 1) };
        let unit = CodingUnit {
            level: 3,
            sublevel: 0,
            members: (300..400).collect(),
            context: (0..300).collect(),
        };
        let params = NeighborParams::default();
        let space = AttributeSpace::Reflectance { bits: 8 };
        let b = assemble_bundles(&unit, &view, space, &params, InputMode::Residual).unwrap();
        let (k, k1, k2) = (params.k, params.k1, params.k2);
        for t in 0..100 {
            let target = pts[300 + t];
            let s_m = brute_knn(target, &pts[..300], &h[..300], k);
            assert_eq!(&b.neighbors[t * k..(t + 1) * k], s_m.as_slice());
            let sm_coords: Vec<_> = s_m.iter().map(|&j| pts[j as usize]).collect();
            let sm_h: Vec<_> = s_m.iter().map(|&j| h[j as usize]).collect();
            for kk in 0..k1 {
                let want = brute_knn(sm_coords[kk], &sm_coords, &sm_h, k2);
                let at = (t * k1 + kk) * k2;
                assert_eq!(&b.groups[at..at + k2], want.as_slice());
                assert_eq!(want[0], kk as u32);
                for tt in 0..k2 {
                    let z = &b.zbar[(at + tt) * 3..(at + tt) * 3 + 3];
                    let norm = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
                    assert!(norm <= 1.0 + 1e-12);
                    if tt == 0 {
                        assert_eq!(norm, 0.0);
                    }
                    let x = attrs[s_m[want[tt] as usize] as usize] as f64;
                    assert_eq!(b.xbar[at + tt], (x - b.pred[t].to_f64()) / 256.0);
                }
            }
            let z2 = &b.zbar2[t * k1 * 3..(t + 1) * k1 * 3];
            let max = z2.chunks(3).map(|z| (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt()).fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-12);
        }
        let idw = idw_predictions(&unit, &view).unwrap();
        assert_eq!(idw, b.pred);
    }

    #[test]
    fn assembly_never_reads_uncoded_attributes() {
        let (pts, h, attrs) = random_slice(50, 4);
        let mut known = vec![false; 50];
        known[..20].fill(true);
        let view = SliceView { coords: &pts, hilbert: &h, attrs: KnownAttributes::new(&attrs, &known, 1) };
        let space = AttributeSpace::Reflectance { bits: 8 };
        let ok = CodingUnit { level: 2, sublevel: 0, members: (20..50).collect(), context: (0..20).collect() };
        assert!(assemble_bundles(&ok, &view, space, &NeighborParams::default(), InputMode::Residual).is_ok());
        let leaky = CodingUnit { level: 2, sublevel: 0, members: (20..50).collect(), context: (0..21).collect() };
        let err = assemble_bundles(&leaky, &view, space, &NeighborParams::default(), InputMode::Residual);
        assert!(matches!(err, Err(Error::Causality(20))));
        assert!(matches!(idw_predictions(&leaky, &view), Err(Error::Causality(_))));
    }
}
