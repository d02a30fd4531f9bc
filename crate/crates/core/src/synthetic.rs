//! Seeded point cloud generators for tests, benchmarks and the `synth` command.

use std::collections::HashSet;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::pointcloud::color::rgb_to_ycocg_r;
use crate::pointcloud::{AttributeSpace, PointCloud};

fn grid_cells(geom_bits: u8) -> u64 {
    1u64 << (3 * geom_bits as u32)
}

fn random_attribute(rng: &mut ChaCha8Rng, space: AttributeSpace, out: &mut Vec<i32>) {
    match space {
        AttributeSpace::ColorRgb | AttributeSpace::ColorYCoCg => {
            let rgb = [rng.random_range(0..256), rng.random_range(0..256), rng.random_range(0..256)];
            let v = if space == AttributeSpace::ColorYCoCg { rgb_to_ycocg_r(rgb).unwrap() } else { rgb };
            out.extend(v);
        }
        AttributeSpace::Reflectance { bits } => out.push(rng.random_range(0..1 << bits)),
    }
}

/// `n` distinct uniform positions with uniform attributes.
///
/// Panics if `n` exceeds the number of grid cells.
pub fn random_cloud(n: usize, geom_bits: u8, space: AttributeSpace, seed: u64) -> PointCloud {
    assert!(n as u64 <= grid_cells(geom_bits), "{n} points do not fit a {geom_bits}-bit grid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 1u32 << geom_bits;
    let mut seen = HashSet::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    if n as u64 * 2 > grid_cells(geom_bits) {
        // Dense: shuffle every cell and keep a prefix.
        let mut all: Vec<[u32; 3]> = (0..grid_cells(geom_bits) as u32)
            .map(|i| [i % side, (i >> geom_bits) % side, i >> (2 * geom_bits)])
            .collect();
        for i in 0..n {
            let j = rng.random_range(i..all.len());
            all.swap(i, j);
        }
        all.truncate(n);
        positions = all;
    } else {
        while positions.len() < n {
            let p = [rng.random_range(0..side), rng.random_range(0..side), rng.random_range(0..side)];
            if seen.insert(p) {
                positions.push(p);
            }
        }
    }
    let mut attributes = Vec::with_capacity(n * space.channels());
    for _ in 0..n {
        random_attribute(&mut rng, space, &mut attributes);
    }
    PointCloud::new(positions, attributes, space, geom_bits).expect("generator output is valid")
}

struct Wave {
    k: [f64; 3],
    phase: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, side: f64, cycles: (f64, f64)) -> Self {
        let mut k = [0.0; 3];
        for v in &mut k {
            *v = rng.random_range(cycles.0..cycles.1) * TAU / side * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
        Self { k, phase: rng.random_range(0.0..TAU) }
    }

    fn at(&self, p: [f64; 3]) -> f64 {
        (self.k[0] * p[0] + self.k[1] * p[1] + self.k[2] * p[2] + self.phase).sin()
    }
}

/// A terrain-like surface carrying smooth attributes.
///
/// Points lie on a height field over the grid. Each attribute channel is a
/// sum of low-frequency waves whose amplitude varies over space, plus
/// Gaussian noise whose level also varies over space.
pub fn smooth_cloud(n: usize, geom_bits: u8, space: AttributeSpace, seed: u64) -> PointCloud {
    let side = (1u32 << geom_bits) as f64;
    assert!((n as f64) < side * side / 4.0, "{n} points are too dense for a {geom_bits}-bit surface");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C10D);
    let height: Vec<Wave> = (0..3).map(|_| Wave::random(&mut rng, side, (0.3, 1.5))).collect();
    let channels = space.channels();
    let fields: Vec<Vec<Wave>> =
        (0..channels).map(|_| (0..4).map(|_| Wave::random(&mut rng, side, (0.5, 3.0))).collect()).collect();
    let amp = Wave::random(&mut rng, side, (0.3, 1.0));
    let noise_level = Wave::random(&mut rng, side, (0.3, 1.0));
    let gauss = Normal::new(0.0, 1.0).unwrap();

    let mut seen = HashSet::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    let mut attributes = Vec::with_capacity(n * channels);
    let max8 = 255.0;
    while positions.len() < n {
        let x = rng.random_range(0.0..side);
        let y = rng.random_range(0.0..side);
        let h: f64 = height.iter().map(|w| w.at([x, y, 0.0])).sum::<f64>() / 3.0;
        let z = ((0.5 + 0.3 * h) * side).clamp(0.0, side - 1.0);
        let p = [x as u32, y as u32, z as u32];
        if !seen.insert(p) {
            continue;
        }
        positions.push(p);
        let pf = [p[0] as f64, p[1] as f64, p[2] as f64];
        let a = 15.0 + 45.0 * (0.5 + 0.5 * amp.at(pf));
        let sigma = 0.3 + 2.2 * (0.5 + 0.5 * noise_level.at(pf));
        let base: f64 = fields[0].iter().map(|w| w.at(pf)).sum::<f64>() / 2.0;
        let mut vals = [0i32; 3];
        for (c, v) in vals.iter_mut().enumerate().take(channels) {
            let own: f64 = fields[c].iter().map(|w| w.at(pf)).sum::<f64>() / 2.0;
            let s = if c == 0 { base } else { 0.7 * base + 0.3 * own };
            let raw = 128.0 + a * s + sigma * gauss.sample(&mut rng);
            *v = raw.round().clamp(0.0, max8) as i32;
        }
        match space {
            AttributeSpace::ColorRgb => attributes.extend(vals),
            AttributeSpace::ColorYCoCg => attributes.extend(rgb_to_ycocg_r(vals).unwrap()),
            AttributeSpace::Reflectance { bits } => {
                let scaled = (vals[0] as f64 / max8 * ((1u32 << bits) - 1) as f64).round() as i32;
                attributes.push(scaled);
            }
        }
    }
    PointCloud::new(positions, attributes, space, geom_bits).expect("generator output is valid")
}

/// `count` smooth clouds with seeds `seed, seed + 1, ...`.
pub fn smooth_corpus(count: usize, n: usize, geom_bits: u8, space: AttributeSpace, seed: u64) -> Vec<PointCloud> {
    (0..count as u64).map(|i| smooth_cloud(n, geom_bits, space, seed.wrapping_add(i))).collect()
}
