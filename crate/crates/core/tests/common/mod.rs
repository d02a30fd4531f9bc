#![allow(dead_code)]

use std::collections::HashSet;

use hapcac::hilbert::hilbert_order;
use hapcac::lod::{build_lod, LodParams};
use hapcac::model::{ContextModel, ModelConfig};
use hapcac::neighborhood::{assemble_bundles, InputMode, KnownAttributes, NeighborParams, SliceView, UnitBundle};
use hapcac::synthetic::{random_cloud, smooth_cloud};
use hapcac::tensor::gradcheck::relative_error;
use hapcac::tensor::{check_gradients, GradCheck, GradCheckOptions, Tape, Tensor, Var};
use hapcac::{AttributeSpace, PointCloud, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

/// Values bounded away from zero so that relu stencils rarely cross the kink.
pub fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = r.random_range(0.1..1.5);
        if r.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Weighted sum of `x` against a fixed random tensor, so that every output
/// element reaches the loss with a distinct weight.
fn project(tape: &mut Tape, x: Var, r: &mut ChaCha8Rng) -> Result<Var> {
    let w = random_tensor(r, tape.shape(x), -1.0, 1.0);
    let w = tape.constant(w);
    let y = tape.mul(x, w)?;
    tape.sum_all(y)
}

pub type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

/// One finite-difference case per tape primitive, drawn from `seed`.
pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut r = rng(seed);
    let (m, k, n) = (r.random_range(1..5), r.random_range(1..6), r.random_range(1..5));
    let ws = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut cases: Vec<Case> = Vec::new();
    macro_rules! case {
        ($name:expr, $inputs:expr, |$t:ident, $v:ident, $r:ident| $body:expr) => {{
            let salt = ws ^ cases.len() as u64;
            cases.push((
                $name,
                $inputs,
                Box::new(move |$t: &mut Tape, $v: &[Var]| {
                    let mut $r = rng(salt);
                    let out = $body;
                    project($t, out, &mut $r)
                }),
            ));
        }};
    }
    case!("matmul", vec![random_tensor(&mut r, &[m, k], -1.0, 1.0), random_tensor(&mut r, &[k, n], -1.0, 1.0)], |t, v, _r| {
        t.matmul(v[0], v[1])?
    });
    case!("add", vec![random_tensor(&mut r, &[m, n], -1.0, 1.0), random_tensor(&mut r, &[m, n], -1.0, 1.0)], |t, v, _r| {
        t.add(v[0], v[1])?
    });
    case!("sub", vec![random_tensor(&mut r, &[m, n], -1.0, 1.0), random_tensor(&mut r, &[m, n], -1.0, 1.0)], |t, v, _r| {
        t.sub(v[0], v[1])?
    });
    case!("mul", vec![random_tensor(&mut r, &[m, n], -1.0, 1.0), random_tensor(&mut r, &[m, n], -1.0, 1.0)], |t, v, _r| {
        t.mul(v[0], v[1])?
    });
    let c: f64 = r.random_range(-2.0..2.0);
    case!("scale", vec![random_tensor(&mut r, &[m, n], -1.0, 1.0)], |t, v, _r| t.scale(v[0], c));
    case!("relu", vec![away_from_zero(&mut r, &[m, k])], |t, v, _r| t.relu(v[0]));
    case!("exp", vec![random_tensor(&mut r, &[m, n], -2.0, 2.0)], |t, v, _r| t.exp(v[0]));
    case!("log", vec![random_tensor(&mut r, &[m, n], 0.2, 3.0)], |t, v, _r| t.log(v[0]));
    case!("softplus", vec![random_tensor(&mut r, &[m, n], -4.0, 4.0)], |t, v, _r| t.softplus(v[0]));
    let axis = r.random_range(0..3);
    case!("softmax", vec![random_tensor(&mut r, &[m, k, n], -2.0, 2.0)], |t, v, _r| t.softmax(v[0], axis)?);
    case!("sum", vec![random_tensor(&mut r, &[m, k, n], -1.0, 1.0)], |t, v, _r| t.sum(v[0], axis)?);
    case!("mean", vec![random_tensor(&mut r, &[m, k, n], -1.0, 1.0)], |t, v, _r| t.mean(v[0], axis)?);
    case!("sum_all", vec![random_tensor(&mut r, &[m, n], -1.0, 1.0)], |t, v, _r| {
        let s = t.sum_all(v[0])?;
        let s2 = t.mul(s, s)?;
        t.reshape(s2, &[1])?
    });
    let rows: Vec<usize> = (0..r.random_range(1..8)).map(|_| r.random_range(0..m)).collect();
    case!("gather", vec![random_tensor(&mut r, &[m, k], -1.0, 1.0)], |t, v, _r| t.gather(v[0], &rows)?);
    let cat_axis = r.random_range(0..2);
    let other = if cat_axis == 0 { [k + 1, n] } else { [m, k + 1] };
    case!("concat", vec![random_tensor(&mut r, &[m, n], -1.0, 1.0), random_tensor(&mut r, &other, -1.0, 1.0)], |t, v, _r| {
        t.concat(&[v[0], v[1]], cat_axis)?
    });
    case!("broadcast", vec![random_tensor(&mut r, &[k, 1], -1.0, 1.0)], |t, v, _r| t.broadcast(v[0], &[m, k, n])?);
    case!("reshape", vec![random_tensor(&mut r, &[m, k * n], -1.0, 1.0)], |t, v, _r| {
        let y = t.reshape(v[0], &[m * k, n])?;
        t.mul(y, y)?
    });
    let targets: Vec<f64> = (0..m * n).map(|_| r.random_range(0..32) as f64).collect();
    case!(
        "laplace_nll",
        vec![random_tensor(&mut r, &[m, n], 0.0, 31.0), random_tensor(&mut r, &[m, n], 0.5, 6.0)],
        |t, v, _r| {
            let l = t.laplace_nll(v[0], v[1], &targets)?;
            t.reshape(l, &[1])?
        }
    );
    cases
}

/// Worst relative error per primitive for `seed`.
pub fn check_primitives(seed: u64) -> Result<Vec<(&'static str, GradCheck)>> {
    primitive_cases(seed)
        .into_iter()
        .map(|(name, inputs, f)| Ok((name, check_gradients(&inputs, GradCheckOptions::default(), f)?)))
        .collect()
}

/// Bundles and targets of every refinement unit of the first slice, with all
/// attributes known.
pub fn unit_bundles(pc: &PointCloud, lod: &LodParams, nb: &NeighborParams, mode: InputMode) -> Result<Vec<(UnitBundle, Vec<f64>)>> {
    let coding = pc.to_coding_space();
    let space = coding.space();
    let c = space.channels();
    let (order, hilbert) = hilbert_order(coding.positions(), coding.geom_bits())?;
    let coords: Vec<[u32; 3]> = order.iter().map(|&i| coding.positions()[i]).collect();
    let attrs: Vec<i32> = order.iter().flat_map(|&i| coding.attr(i).iter().copied()).collect();
    let n = coords.len().min(lod.slice_size);
    let part = build_lod(&hilbert[..n], lod, 0)?;
    let known = vec![true; n];
    let view = SliceView { coords: &coords[..n], hilbert: &hilbert[..n], attrs: KnownAttributes::new(&attrs[..n * c], &known, c) };
    part.units[1..]
        .iter()
        .map(|u| {
            let b = assemble_bundles(u, &view, space, nb, mode)?;
            let t = u.members.iter().flat_map(|&m| attrs[m as usize * c..(m as usize + 1) * c].iter().map(|&v| v as f64)).collect();
            Ok((b, t))
        })
        .collect()
}

/// Finite-difference check of the full model code length for one seed.
///
/// A small model and a small unit keep the check fast; every parameter
/// tensor is probed at up to `coords` strided coordinates.
pub fn check_model(seed: u64, coords: usize) -> Result<GradCheck> {
    let mut r = rng(seed);
    let space = if r.random_bool(0.5) { AttributeSpace::Reflectance { bits: 8 } } else { AttributeSpace::ColorRgb };
    let mode = if r.random_bool(0.5) { InputMode::Residual } else { InputMode::Raw };
    let nb = NeighborParams { k: 6, k1: 3, k2: 2 };
    let config = ModelConfig {
        feature_dim: 4,
        hidden_dim: 5,
        channels: space.channels(),
        k: nb.k,
        k1: nb.k1,
        k2: nb.k2,
        input_mode: mode,
    };
    let pc = smooth_cloud(200, 8, space, seed);
    let lod = LodParams { n1: 8, ..LodParams::default() };
    let units = unit_bundles(&pc, &lod, &nb, mode)?;
    let (bundle, targets) = &units[r.random_range(0..2.min(units.len()))];
    let (bundle, targets) = (bundle.rows(0..bundle.targets.min(6)), targets[..bundle.targets.min(6) * space.channels()].to_vec());
    let mut model = ContextModel::new(config, seed)?;
    // Break the small-head initialization so every path carries gradient.
    for p in model.parameters_mut() {
        for v in p.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    let coding_space = space.coding_space();
    let cross = check_cross(&model, &bundle, &targets, coding_space)?;
    let opts = GradCheckOptions { max_coords: coords, ..GradCheckOptions::default() };
    let mut report = check_gradients(model.parameters(), opts, |tape, p| {
        let (mu, b) = model.forward(tape, p, &bundle, coding_space)?;
        let l = tape.laplace_nll(mu, b, &targets)?;
        tape.reshape(l, &[1])
    })?;
    report.max_rel_error = report.max_rel_error.max(cross);
    Ok(report)
}

/// The gradient-free code length must equal the taped one.
fn check_cross(model: &ContextModel, bundle: &UnitBundle, targets: &[f64], space: AttributeSpace) -> Result<f64> {
    let (bits, _) = model.loss_and_grad(bundle, targets, space)?;
    Ok(relative_error(bits, model.loss(bundle, targets, space)?))
}

/// 200 clouds spanning size, depth, attribute space and mode.
///
/// Returns `(cloud, use_neural)` pairs. Sizes are log-uniform in `17..=2^15`.
pub fn roundtrip_corpus(count: usize, seed: u64) -> Vec<(PointCloud, bool)> {
    let mut r = rng(seed);
    (0..count)
        .map(|i| {
            let bits = r.random_range(4..=12u8);
            let cap = 1usize << (3 * bits as u32).min(15);
            let hi = (cap as f64).log2();
            let n = (2f64.powf(r.random_range((17f64).log2()..=hi)) as usize).clamp(17, cap);
            let space = match i % 3 {
                0 => AttributeSpace::ColorRgb,
                1 => AttributeSpace::Reflectance { bits: 8 },
                _ => AttributeSpace::Reflectance { bits: r.random_range(1..=12) },
            };
            let fits_surface = (n as u64) < (1u64 << (2 * bits as u32)) / 4;
            let pc = if !fits_surface || r.random_bool(0.5) { random_cloud(n, bits, space, seed ^ i as u64) } else { smooth_cloud(n, bits, space, seed ^ i as u64) };
            (pc, i % 2 == 1)
        })
        .collect()
}

/// Small untrained model for `space`.
pub fn small_model(space: AttributeSpace, seed: u64) -> ContextModel {
    let nb = small_neighbors();
    let config = ModelConfig {
        feature_dim: 8,
        hidden_dim: 8,
        channels: space.coding_space().channels(),
        k: nb.k,
        k1: nb.k1,
        k2: nb.k2,
        input_mode: InputMode::Residual,
    };
    ContextModel::new(config, seed).unwrap()
}

pub fn small_neighbors() -> NeighborParams {
    NeighborParams { k: 12, k1: 4, k2: 4 }
}

/// Panics unless `units` partition `0..n` with causal, bounded contexts.
pub fn check_partition(part: &hapcac::lod::LodPartition, n: usize, params: &LodParams) {
    let mut seen = HashSet::new();
    for (u, unit) in part.units.iter().enumerate() {
        assert!(unit.members.len() <= params.max_unit, "unit {u} too large");
        assert!(unit.members.windows(2).all(|w| w[0] < w[1]), "unit {u} not ascending");
        assert!(unit.context.len() <= params.max_context, "context {u} too large");
        for &c in &unit.context {
            assert!(seen.contains(&c), "unit {u} reads uncoded point {c}");
        }
        for &m in &unit.members {
            assert!((m as usize) < n);
            assert!(seen.insert(m), "point {m} coded twice");
        }
    }
    assert_eq!(seen.len(), n, "partition misses points");
}

fn laplace_density(x: f64, mu: f64, b: f64) -> f64 {
    (-(x - mu).abs() / b).exp() / (2.0 * b)
}

/// Composite Simpson integral of the Laplace density over `[lo, hi]`, split at
/// `mu` so that no panel straddles the kink.
pub fn integrate_laplace(lo: f64, hi: f64, mu: f64, b: f64) -> f64 {
    let simpson = |a: f64, c: f64| {
        let n = 2000;
        let h = (c - a) / n as f64;
        let mut s = laplace_density(a, mu, b) + laplace_density(c, mu, b);
        for i in 1..n {
            s += laplace_density(a + i as f64 * h, mu, b) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    if lo < mu && mu < hi {
        simpson(lo, mu) + simpson(mu, hi)
    } else {
        simpson(lo, hi)
    }
}

/// Bin masses with the tails folded into the end bins, by quadrature. The
/// tails are integrated out to 60 scales, beyond which the mass is below 1e-26.
pub fn oracle_bin_masses(mu: f64, b: f64, v_min: i32, v_max: i32) -> Vec<f64> {
    (v_min..=v_max)
        .map(|v| {
            let mut lo = v as f64 - 0.5;
            let mut hi = v as f64 + 0.5;
            if v == v_min {
                lo = lo.min(mu) - 60.0 * b;
            }
            if v == v_max {
                hi = hi.max(mu) + 60.0 * b;
            }
            if v == v_min || v == v_max {
                // Integrate in pieces so the panels stay short.
                let edges: Vec<f64> = (0..=120).map(|i| lo + (hi - lo) * i as f64 / 120.0).collect();
                edges.windows(2).map(|w| integrate_laplace(w[0], w[1], mu, b)).sum()
            } else {
                integrate_laplace(lo, hi, mu, b)
            }
        })
        .collect()
}

/// Symbols drawn from `table`'s own distribution.
pub fn sample_symbol(r: &mut ChaCha8Rng, table: &hapcac::entropy::QuantizedDistribution) -> i32 {
    table.symbol_at(r.random_range(0..hapcac::entropy::FREQ_TOTAL)).unwrap()
}

/// A random Laplace table over a random alphabet.
pub fn random_table(r: &mut ChaCha8Rng) -> hapcac::entropy::QuantizedDistribution {
    let v_min = r.random_range(-300..=0);
    let v_max = v_min + r.random_range(1..600);
    let mu = r.random_range(v_min as f64 - 5.0..v_max as f64 + 5.0);
    let b = 0.05 * 2f64.powf(r.random_range(0.0..11.0));
    hapcac::entropy::quantize_laplace(mu, b, v_min, v_max).unwrap()
}

/// `(payload bits, ideal bits)` for one random stream of `len` symbols.
pub fn coder_trial(r: &mut ChaCha8Rng, len: usize) -> (f64, f64) {
    let tables: Vec<_> = (0..len.clamp(1, 64)).map(|_| random_table(r)).collect();
    let refs: Vec<&hapcac::entropy::QuantizedDistribution> = (0..len).map(|i| &tables[i % tables.len()]).collect();
    let symbols: Vec<i32> = refs.iter().map(|t| sample_symbol(r, t)).collect();
    let ideal: f64 = symbols.iter().zip(&refs).map(|(&s, t)| t.cost_bits(s).unwrap()).sum();
    let bytes = hapcac::entropy::range_encode(&symbols, &refs).unwrap();
    assert_eq!(hapcac::entropy::range_decode(&bytes, &refs).unwrap(), symbols);
    (8.0 * bytes.len() as f64, ideal)
}
