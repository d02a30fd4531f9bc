//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use hapcac::entropy::{laplace_bin_masses, FREQ_TOTAL};
use hapcac::hilbert::{hilbert_index, hilbert_inverse};
use hapcac::lod::{build_lod, slice_points, LodParams};
use hapcac::model::{ContextModel, ModelConfig};
use hapcac::neighborhood::{InputMode, NeighborParams};
use hapcac::pipeline::{decode, encode, eval_cloud, train, CodecConfig, EvalOptions, TrainOptions};
use hapcac::synthetic::smooth_corpus;
use hapcac::{AttributeSpace, PointCloud};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn(&mut Shared) -> Outcome);

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[derive(Default)]
struct Shared {
    model: Option<ContextModel>,
    residual_curve: Vec<f64>,
    held_out: Vec<PointCloud>,
    train_corpus: Vec<PointCloud>,
}

const REFLECTANCE: AttributeSpace = AttributeSpace::Reflectance { bits: 8 };

fn desk_config(mode: InputMode) -> ModelConfig {
    let nb = NeighborParams { k: 16, k1: 4, k2: 4 };
    ModelConfig { feature_dim: 16, hidden_dim: 16, channels: 1, k: nb.k, k1: nb.k1, k2: nb.k2, input_mode: mode }
}

fn desk_train_options() -> TrainOptions {
    TrainOptions { epochs: 10, learning_rate: 5e-3, batch_units: 8, targets_per_unit: 64, ..TrainOptions::default() }
}

fn round_trip(pc: &PointCloud, cfg: &CodecConfig, model: Option<&ContextModel>) -> Result<Vec<u8>, String> {
    let enc = encode(pc, cfg, model).map_err(|e| e.to_string())?;
    let back = decode(pc.positions(), &enc.bytes, model, cfg.threads).map_err(|e| e.to_string())?;
    if &back != pc {
        return Err("decoded attributes differ".into());
    }
    Ok(enc.bytes)
}

fn lossless_round_trip(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let corpus = common::roundtrip_corpus(200, 2024);
    let mut spaces = HashSet::new();
    let (mut neural, mut points) = (0, 0);
    for (i, (pc, use_model)) in corpus.iter().enumerate() {
        let model = use_model.then(|| common::small_model(pc.space(), i as u64));
        neural += model.is_some() as usize;
        points += pc.len();
        spaces.insert(format!("{:?}", pc.space()));
        round_trip(pc, &CodecConfig::default(), model.as_ref()).map_err(|e| format!("cloud {i}: {e}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        secs < 600.0,
        format!("{} clouds ({neural} neural, {} attribute formats, {points} points) bit-exact in {secs:.1} s", corpus.len(), spaces.len()),
    )
}

fn determinism(_: &mut Shared) -> Outcome {
    let corpus = common::roundtrip_corpus(20, 77);
    for (i, (pc, use_model)) in corpus.iter().enumerate() {
        let model = use_model.then(|| common::small_model(pc.space(), i as u64));
        let run = |threads| {
            let cfg = CodecConfig { lod: LodParams { slice_size: 2048, ..LodParams::default() }, threads, ..CodecConfig::default() };
            encode(pc, &cfg, model.as_ref()).map(|e| e.bytes).map_err(|e| e.to_string())
        };
        let reference = run(1)?;
        for threads in [4, 8, 8] {
            if run(threads)? != reference {
                return Err(format!("cloud {i} differs at {threads} threads"));
            }
        }
    }
    Ok(format!("{} clouds identical across 1/4/8 threads and repeated runs", corpus.len()))
}

fn lod_conformance(_: &mut Shared) -> Outcome {
    let params = LodParams::default();
    let ids: Vec<u64> = (0..16384u64).map(|i| i * 5 + 2).collect();
    let part = build_lod(&ids, &params, 0).map_err(|e| e.to_string())?;
    let sizes = part.level_sizes();
    let expect = vec![16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192, 16];
    if sizes != expect {
        return Err(format!("level sizes {sizes:?}"));
    }
    let largest = part.units.iter().map(|u| u.members.len()).max().unwrap();
    if largest > 512 {
        return Err(format!("unit of {largest} points"));
    }
    common::check_partition(&part, ids.len(), &params);

    let mut r = common::rng(33);
    for trial in 0..1000 {
        let n = if trial % 10 == 0 { 16384 } else { r.random_range(1..=16384) };
        let mut set = HashSet::with_capacity(n);
        while set.len() < n {
            set.insert(r.random_range(0..1u64 << 36));
        }
        let mut hilbert: Vec<u64> = set.into_iter().collect();
        hilbert.sort_unstable();
        let params = LodParams { seed: r.random(), ..LodParams::default() };
        let part = build_lod(&hilbert, &params, r.random_range(0..64)).map_err(|e| e.to_string())?;
        let ok = catch_unwind(|| common::check_partition(&part, n, &params));
        if ok.is_err() {
            return Err(format!("invariant broken for a {n}-point slice"));
        }
    }
    if slice_points(16384 * 3 + 5, 16384).len() != 4 {
        return Err("slicing".into());
    }
    Ok(format!("levels {sizes:?}, largest unit {largest}; 1000 random slices partitioned with causal contexts"))
}

fn coder_optimality(_: &mut Shared) -> Outcome {
    let mut r = common::rng(44);
    let (mut worst_over, mut worst_under, mut symbols) = (f64::MIN, f64::MAX, 0);
    for trial in 0..300 {
        let len = if trial < 10 { trial } else { 2f64.powf(r.random_range(0.0..15.0)) as usize };
        let (payload, ideal) = common::coder_trial(&mut r, len);
        symbols += len;
        worst_over = worst_over.max(payload - ideal);
        worst_under = worst_under.min(payload - ideal);
    }
    ensure(
        worst_over <= 64.0 && worst_under >= -1.0,
        format!("300 streams, {symbols} symbols: payload - ideal in [{worst_under:.2}, {worst_over:.2}] bits"),
    )
}

fn laplace_discretization(_: &mut Shared) -> Outcome {
    let mut r = common::rng(55);
    let mut worst: f64 = 0.0;
    for _ in 0..400 {
        let v_min = r.random_range(-256..64);
        let v_max = v_min + r.random_range(1..200);
        let mu = r.random_range(v_min as f64 - 4.0..v_max as f64 + 4.0);
        let b = 0.05 * 2f64.powf(r.random_range(0.0..10.0));
        let got = laplace_bin_masses(mu, b, v_min, v_max).map_err(|e| e.to_string())?;
        let want = common::oracle_bin_masses(mu, b, v_min, v_max);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs() * FREQ_TOTAL as f64);
        }
    }
    let center = laplace_bin_masses(128.0, 1.0, 0, 255).map_err(|e| e.to_string())?[128];
    let center_err = (center - (1.0 - (-0.5f64).exp())).abs();
    ensure(
        worst < 1.0 && center_err < 1e-12,
        format!("400 tables: max deviation {worst:.2e} grid units; center bin error {center_err:.1e}"),
    )
}

fn gradient_checks(_: &mut Shared) -> Outcome {
    let (mut prim, mut model, mut checked, mut skipped) = (0f64, 0f64, 0, 0);
    let mut worst_name = "";
    for seed in 0..100 {
        for (name, rep) in common::check_primitives(seed).map_err(|e| e.to_string())? {
            if rep.checked == 0 {
                return Err(format!("{name} seed {seed}: no coordinate checked"));
            }
            if rep.max_rel_error > prim {
                prim = rep.max_rel_error;
                worst_name = name;
            }
            checked += rep.checked;
            skipped += rep.skipped;
        }
        let rep = common::check_model(seed, 3).map_err(|e| e.to_string())?;
        model = model.max(rep.max_rel_error);
        checked += rep.checked;
        skipped += rep.skipped;
    }
    ensure(
        prim < 1e-4 && model < 1e-4,
        format!(
            "100 seeds: primitives max rel err {prim:.1e} ({worst_name}), full model {model:.1e}; {checked} coords, {skipped} skipped at kinks"
        ),
    )
}

fn learning_efficacy(s: &mut Shared) -> Outcome {
    s.train_corpus = smooth_corpus(50, 16384, 12, REFLECTANCE, 1000);
    s.held_out = smooth_corpus(10, 16384, 12, REFLECTANCE, 5000);
    let start = Instant::now();
    let out = train(&s.train_corpus, desk_config(InputMode::Residual), &LodParams::default(), &desk_train_options())
        .map_err(|e| e.to_string())?;
    let train_s = start.elapsed().as_secs_f64();
    let cfg = CodecConfig::default();
    let (mut neural_bits, mut base_bits, mut points, mut wins) = (0.0, 0.0, 0, 0);
    for (i, pc) in s.held_out.iter().enumerate() {
        let n = round_trip(pc, &cfg, Some(&out.model)).map_err(|e| format!("held-out {i}: {e}"))?.len() as f64 * 8.0;
        let b = round_trip(pc, &cfg, None).map_err(|e| format!("held-out {i}: {e}"))?.len() as f64 * 8.0;
        wins += (n <= b) as usize;
        neural_bits += n;
        base_bits += b;
        points += pc.len();
    }
    let (neural, base) = (neural_bits / points as f64, base_bits / points as f64);
    s.model = Some(out.model);
    s.residual_curve = out.epoch_bits_per_point;
    ensure(
        train_s <= 1800.0 && neural <= base && base < 8.0 * 0.7,
        format!(
            "trained {train_s:.0} s; held-out bpp neural {neural:.3} vs baseline {base:.3} ({wins}/10 clouds won), bound {:.1}",
            8.0 * 0.7
        ),
    )
}

fn residual_advantage(s: &mut Shared) -> Outcome {
    if s.residual_curve.is_empty() {
        return Err("residual training did not run".into());
    }
    let raw = train(&s.train_corpus, desk_config(InputMode::Raw), &LodParams::default(), &desk_train_options())
        .map_err(|e| e.to_string())?
        .epoch_bits_per_point;
    let res = &s.residual_curve;
    let fmt = |c: &[f64]| c.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ");
    let at = [2, 5, 10];
    let strict = at.iter().all(|&e| res[e - 1] < raw[e - 1]);
    let every = (2..=res.len()).filter(|&e| res[e - 1] < raw[e - 1]).count();
    ensure(
        strict,
        format!("residual [{}] raw [{}]; lower at epochs 2/5/10, at {every}/{} epochs >= 2", fmt(res), fmt(&raw), res.len() - 1),
    )
}

fn hilbert_properties(_: &mut Shared) -> Outcome {
    for bits in 1..=6u8 {
        let side = 1u32 << bits;
        let cells = 1u64 << (3 * bits);
        let mut seen = vec![false; cells as usize];
        for x in 0..side {
            for y in 0..side {
                for z in 0..side {
                    let h = hilbert_index([x, y, z], bits).map_err(|e| e.to_string())?;
                    if h >= cells || std::mem::replace(&mut seen[h as usize], true) {
                        return Err(format!("collision at {bits} bits"));
                    }
                }
            }
        }
        let mut prev = hilbert_inverse(0, bits).map_err(|e| e.to_string())?;
        for h in 1..cells {
            let c = hilbert_inverse(h, bits).map_err(|e| e.to_string())?;
            let step: u32 = (0..3).map(|i| c[i].abs_diff(prev[i])).sum();
            if step != 1 {
                return Err(format!("non-adjacent step at {bits} bits, index {h}"));
            }
            prev = c;
        }
    }
    let mut r = common::rng(99);
    for _ in 0..1_000_000 {
        let c = [r.random_range(0..1 << 16), r.random_range(0..1 << 16), r.random_range(0..1 << 16)];
        let h = hilbert_index(c, 16).map_err(|e| e.to_string())?;
        if hilbert_inverse(h, 16).map_err(|e| e.to_string())? != c {
            return Err(format!("round trip failed for {c:?}"));
        }
    }
    Ok("bijective and unit-step for 1..=6 bits; 10^6 samples round-trip at 16 bits".into())
}

fn scale_invariance(s: &mut Shared) -> Outcome {
    let clouds = &s.held_out[..3];
    let cfg = CodecConfig::default();
    let mut lines = Vec::new();
    let mut settings = 0;
    for (name, model) in [("baseline", None), ("neural", s.model.as_ref())] {
        for step in [1, 2, 8, 32] {
            for bits in [5, 6, 7, 8] {
                let (mut total, mut points) = (0u64, 0usize);
                for (i, pc) in clouds.iter().enumerate() {
                    let r = eval_cloud(pc, &cfg, model, EvalOptions { quant_step: step, refl_bits: Some(bits) })
                        .map_err(|e| format!("{name} step {step} bits {bits} cloud {i}: {e}"))?;
                    total += r.total_bits();
                    points += r.points;
                }
                lines.push(format!("{name:>8} step {step:>2} refl {bits}: {points:>6} points {:.3} bpp", total as f64 / points as f64));
                settings += 1;
            }
        }
    }
    for l in &lines {
        println!("        {l}");
    }
    if s.model.is_none() {
        return Err(format!("{settings} settings lossless, but no trained model to evaluate"));
    }
    Ok(format!("{settings} settings x 3 clouds lossless"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("lossless round trip", lossless_round_trip),
        ("determinism", determinism),
        ("level of detail", lod_conformance),
        ("entropy coder optimality", coder_optimality),
        ("laplace discretization", laplace_discretization),
        ("gradient checks", gradient_checks),
        ("learning efficacy", learning_efficacy),
        ("residual inputs converge faster", residual_advantage),
        ("hilbert properties", hilbert_properties),
        ("scale invariance", scale_invariance),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut shared)))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2}. {name}: {detail} [{secs:.1} s]", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
