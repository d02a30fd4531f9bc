//! Slicing and coarse-to-fine level-of-detail construction.
//!
//! Every decision here is made on Hilbert order alone: interval sampling picks
//! refinement levels, and context groups are trimmed by distance to the mean
//! Hilbert index of the unit being coded. No Euclidean distance is evaluated.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hilbert::HilbertIndex;

/// How the first member of each refinement level is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FirstPoint {
    /// Seeded draw from the first `K_l` unselected points.
    Random,
    /// Always the first unselected point.
    First,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LodParams {
    /// Size of the first refinement level.
    pub n1: usize,
    /// Level size multiplier.
    pub growth: usize,
    /// Maximum points per coding unit; larger levels are split.
    pub max_unit: usize,
    /// Maximum context group size.
    pub max_context: usize,
    pub slice_size: usize,
    pub seed: u64,
    pub first_point: FirstPoint,
}

impl Default for LodParams {
    fn default() -> Self {
        Self {
            n1: 16,
            growth: 2,
            max_unit: 512,
            max_context: 2048,
            slice_size: 1 << 14,
            seed: 0,
            first_point: FirstPoint::Random,
        }
    }
}

impl LodParams {
    pub fn validate(&self) -> Result<()> {
        if self.n1 < 1 {
            return invalid("n1 must be at least 1");
        }
        if self.growth < 2 {
            return invalid("growth must be at least 2");
        }
        if self.max_unit < self.n1 {
            return invalid("max_unit must be at least n1");
        }
        if self.max_context < 1 {
            return invalid("max_context must be at least 1");
        }
        if self.slice_size < self.n1 {
            return invalid("slice_size must be at least n1");
        }
        Ok(())
    }
}

/// One refinement level, or one sub-level of a split level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodingUnit {
    /// 1-based refinement level.
    pub level: u32,
    /// 0-based sub-level within the level.
    pub sublevel: u32,
    /// Slice-local indices, ascending (= ascending Hilbert index).
    pub members: Vec<u32>,
    /// Slice-local indices of earlier-coded points, ascending.
    pub context: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LodPartition {
    pub units: Vec<CodingUnit>,
}

impl LodPartition {
    /// Sizes of whole refinement levels (sub-levels merged), in level order.
    pub fn level_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = Vec::new();
        let mut last = 0;
        for u in &self.units {
            if u.level != last {
                sizes.push(0);
                last = u.level;
            }
            *sizes.last_mut().unwrap() += u.members.len();
        }
        sizes
    }
}

/// Contiguous ranges of `slice_size` points over a Hilbert-sorted cloud.
pub fn slice_points(n: usize, slice_size: usize) -> Vec<Range<usize>> {
    assert!(slice_size > 0, "slice_size must be positive");
    (0..n).step_by(slice_size).map(|s| s..(s + slice_size).min(n)).collect()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based draw in `[0, k)` keyed by `(seed, slice, level)`.
pub fn level_draw(seed: u64, slice_id: u64, level: u32, k: usize) -> usize {
    let h = splitmix64(splitmix64(splitmix64(seed) ^ slice_id) ^ level as u64);
    ((h as u128 * k as u128) >> 64) as usize
}

/// Builds coding units and their context groups for one Hilbert-sorted slice.
pub fn build_lod(slice_hilbert: &[HilbertIndex], params: &LodParams, slice_id: u64) -> Result<LodPartition> {
    params.validate()?;
    if slice_hilbert.is_empty() {
        return invalid("cannot build a level of detail for an empty slice");
    }
    debug_assert!(slice_hilbert.windows(2).all(|w| w[0] < w[1]), "slice must be Hilbert sorted");

    let mut levels: Vec<Vec<u32>> = Vec::new();
    let mut remaining: Vec<u32> = (0..slice_hilbert.len() as u32).collect();
    let mut target = params.n1;
    while !remaining.is_empty() {
        let level = levels.len() as u32 + 1;
        if remaining.len() < target {
            levels.push(std::mem::take(&mut remaining));
            break;
        }
        let interval = (remaining.len() / target).max(1);
        let start = match params.first_point {
            FirstPoint::Random => level_draw(params.seed, slice_id, level, interval),
            FirstPoint::First => 0,
        };
        // With interval = floor(|P_ns| / n_l) the last pick start + (n_l - 1) * interval
        // stays below |P_ns|, so no wrap-around is needed.
        let mut picked = vec![false; remaining.len()];
        for i in 0..target {
            picked[start + i * interval] = true;
        }
        let mut selected = Vec::with_capacity(target);
        let mut rest = Vec::with_capacity(remaining.len() - target);
        for (pos, idx) in remaining.into_iter().enumerate() {
            if picked[pos] {
                selected.push(idx);
            } else {
                rest.push(idx);
            }
        }
        levels.push(selected);
        remaining = rest;
        target = target.saturating_mul(params.growth);
    }

    let mut units: Vec<CodingUnit> = Vec::new();
    for (l, members) in levels.into_iter().enumerate() {
        for (s, chunk) in members.chunks(params.max_unit).enumerate() {
            let context = build_context_group(&units, chunk, slice_hilbert, params.max_context);
            units.push(CodingUnit {
                level: l as u32 + 1,
                sublevel: s as u32,
                members: chunk.to_vec(),
                context,
            });
        }
    }
    Ok(LodPartition { units })
}

/// Context for `unit_members`: all points of earlier units, trimmed to the
/// `max_context` closest to the unit's mean Hilbert index.
///
/// The mean is kept as an exact `(sum, count)` pair; a candidate's distance is
/// `|h * count - sum|`, with ties going to the smaller Hilbert index.
pub fn build_context_group(
    earlier: &[CodingUnit],
    unit_members: &[u32],
    slice_hilbert: &[HilbertIndex],
    max_context: usize,
) -> Vec<u32> {
    let mut candidates: Vec<u32> = earlier.iter().flat_map(|u| u.members.iter().copied()).collect();
    if candidates.len() > max_context && !unit_members.is_empty() {
        let count = unit_members.len() as i128;
        let sum: i128 = unit_members.iter().map(|&i| slice_hilbert[i as usize] as i128).sum();
        let key = |i: &u32| {
            let h = slice_hilbert[*i as usize];
            ((h as i128 * count - sum).unsigned_abs(), h)
        };
        candidates.select_nth_unstable_by_key(max_context - 1, key);
        candidates.truncate(max_context);
    }
    candidates.sort_unstable();
    candidates
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sorted_ids(n: usize) -> Vec<HilbertIndex> {
        (0..n as u64).map(|i| i * 3 + 1).collect()
    }

    #[test]
    fn slicing() {
        assert_eq!(slice_points(1 << 14, 1 << 14), vec![0..16384]);
        let s = slice_points((1 << 14) + 1, 1 << 14);
        assert_eq!(s.iter().map(|r| r.len()).collect::<Vec<_>>(), vec![16384, 1]);
        assert_eq!(slice_points(5, 2).iter().map(|r| r.len()).collect::<Vec<_>>(), vec![2, 2, 1]);
    }

    #[test]
    fn first_level_stride() {
        let h = sorted_ids(1600);
        let part = build_lod(&h, &LodParams::default(), 0).unwrap();
        let first = &part.units[0].members;
        assert_eq!(first.len(), 16);
        let r = first[0];
        assert!(r < 100);
        for (i, &m) in first.iter().enumerate() {
            assert_eq!(m, r + 100 * i as u32);
        }
        assert!(part.units[0].context.is_empty());
    }

    /// Independent simulation of the level-size recurrence.
    fn simulated_level_sizes(n: usize, n1: usize, growth: usize) -> Vec<usize> {
        let mut left = n;
        let mut target = n1;
        let mut out = vec![];
        while left > 0 {
            let take = if left < target { left } else { target };
            out.push(take);
            left -= take;
            target *= growth;
        }
        out
    }

    #[test]
    fn full_slice_levels() {
        let h = sorted_ids(16384);
        let part = build_lod(&h, &LodParams::default(), 0).unwrap();
        let expect = vec![16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192, 16];
        assert_eq!(simulated_level_sizes(16384, 16, 2), expect);
        assert_eq!(part.level_sizes(), expect);
        assert!(part.units.iter().all(|u| u.members.len() <= 512));
        let units_per_level: Vec<usize> = expect.iter().map(|n| n.div_ceil(512)).collect();
        assert_eq!(part.units.len(), units_per_level.iter().sum::<usize>());
    }

    #[test]
    fn tiny_slice_single_unit() {
        let part = build_lod(&sorted_ids(10), &LodParams::default(), 0).unwrap();
        assert_eq!(part.units.len(), 1);
        assert_eq!(part.units[0].members, (0..10).collect::<Vec<_>>());
        assert!(build_lod(&[], &LodParams::default(), 0).is_err());
    }

    #[test]
    fn context_selection() {
        let h: Vec<HilbertIndex> = vec![0, 10, 20, 30, 40, 21];
        let earlier = vec![CodingUnit { level: 1, sublevel: 0, members: vec![0, 1, 2, 3, 4], context: vec![] }];
        // Unit of one point with h=21: distances 21, 11, 1, 9, 19.
        let ctx = build_context_group(&earlier, &[5], &h, 3);
        // Brute-force oracle: sort by (distance, h).
        let mut oracle: Vec<u32> = (0..5).collect();
        oracle.sort_by_key(|&i| ((h[i as usize] as i64 - 21).abs(), h[i as usize]));
        let mut want = oracle[..3].to_vec();
        want.sort();
        assert_eq!(ctx, want);
        assert_eq!(ctx, vec![1, 2, 3]);
        assert_eq!(build_context_group(&earlier[..0], &[5], &h, 3), Vec::<u32>::new());
        assert_eq!(build_context_group(&earlier, &[5], &h, 2048), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let h = sorted_ids(5000);
        let p = LodParams { seed: 11, ..Default::default() };
        assert_eq!(build_lod(&h, &p, 3).unwrap(), build_lod(&h, &p, 3).unwrap());
        let first = LodParams { first_point: FirstPoint::First, ..Default::default() };
        assert_eq!(build_lod(&h, &first, 0).unwrap().units[0].members[0], 0);
    }

    fn check_invariants(h: &[HilbertIndex], p: &LodParams, part: &LodPartition) {
        let n = h.len();
        let mut coded = vec![false; n];
        let mut cumulative = 0;
        assert_eq!(part.units[0].members.len(), p.n1.min(n));
        for u in &part.units {
            assert!(!u.members.is_empty() && u.members.len() <= p.max_unit);
            assert!(u.members.windows(2).all(|w| w[0] < w[1]));
            assert!(u.context.len() <= p.max_context);
            for &c in &u.context {
                assert!(coded[c as usize], "context point {c} not yet coded");
            }
            for &m in &u.members {
                assert!(!coded[m as usize], "point {m} in two units");
                coded[m as usize] = true;
            }
            cumulative += u.members.len();
            assert_eq!(u.context.len(), (cumulative - u.members.len()).min(p.max_context));
        }
        assert!(coded.iter().all(|&c| c));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn partition_invariants(
            n in 1usize..6000,
            n1 in 1usize..40,
            growth in 2usize..4,
            unit_extra in 0usize..300,
            max_context in 1usize..3000,
            seed in any::<u64>(),
        ) {
            let p = LodParams {
                n1, growth, max_unit: n1 + unit_extra, max_context,
                slice_size: n.max(n1), seed, first_point: FirstPoint::Random,
            };
            let h = sorted_ids(n);
            let part = build_lod(&h, &p, seed % 7).unwrap();
            check_invariants(&h, &p, &part);
        }
    }
}
