use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::hilbert::hilbert_order;
use crate::lod::{build_lod, slice_points, CodingUnit, LodParams};
use crate::model::{ContextModel, ModelConfig};
use crate::neighborhood::{assemble_bundles, KnownAttributes, SliceView, UnitBundle};
use crate::par;
use crate::pointcloud::{AttributeSpace, PointCloud};
use crate::tensor::{Adam, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Training items per optimizer step.
    pub batch_units: usize,
    /// Targets sampled from each coding unit.
    pub targets_per_unit: usize,
    /// Slices used from each cloud, counted from the first.
    pub slices_per_cloud: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 3e-3,
            batch_units: 8,
            targets_per_unit: 64,
            slices_per_cloud: 1,
            seed: 0,
            threads: 0,
        }
    }
}

pub struct TrainOutput {
    pub model: ContextModel,
    /// Mean code length of the training targets in each epoch.
    pub epoch_bits_per_point: Vec<f64>,
}

struct Item {
    bundle: UnitBundle,
    targets: Vec<f64>,
}

fn corpus_space(corpus: &[PointCloud]) -> Result<AttributeSpace> {
    let Some(first) = corpus.first() else {
        return invalid("empty training corpus");
    };
    let space = first.space().coding_space();
    if corpus.iter().any(|pc| pc.space().coding_space() != space) {
        return invalid("training corpus mixes attribute spaces");
    }
    Ok(space)
}

/// Seeded random subset of `members`, kept in coding order.
fn sample_members(members: &[u32], cap: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    if members.len() <= cap {
        return members.to_vec();
    }
    let mut idx: Vec<usize> = (0..members.len()).collect();
    idx.shuffle(rng);
    idx.truncate(cap);
    idx.sort_unstable();
    idx.into_iter().map(|i| members[i]).collect()
}

fn build_items(
    corpus: &[PointCloud],
    config: &ModelConfig,
    lod: &LodParams,
    opts: &TrainOptions,
    space: AttributeSpace,
) -> Result<Vec<Item>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7EA1);
    let nb = config.neighbors();
    let c = space.channels();
    let mut items = Vec::new();
    for pc in corpus {
        let coding = pc.to_coding_space();
        let (order, hilbert) = hilbert_order(coding.positions(), coding.geom_bits())?;
        let coords: Vec<[u32; 3]> = order.iter().map(|&i| coding.positions()[i]).collect();
        let attrs: Vec<i32> = order.iter().flat_map(|&i| coding.attr(i).iter().copied()).collect();
        for (s, r) in slice_points(coords.len(), lod.slice_size).into_iter().enumerate().take(opts.slices_per_cloud) {
            let (co, hi, at) = (&coords[r.clone()], &hilbert[r.clone()], &attrs[r.start * c..r.end * c]);
            let part = build_lod(hi, lod, s as u64)?;
            let mut known = vec![false; co.len()];
            for &m in &part.units[0].members {
                known[m as usize] = true;
            }
            let mut units = Vec::new();
            for unit in &part.units[1..] {
                let sampled = CodingUnit {
                    members: sample_members(&unit.members, opts.targets_per_unit, &mut rng),
                    ..unit.clone()
                };
                units.push((sampled, known.clone()));
                for &m in &unit.members {
                    known[m as usize] = true;
                }
            }
            let built = par::try_map_range(units.len(), |u| {
                let (unit, known) = &units[u];
                let view = SliceView { coords: co, hilbert: hi, attrs: KnownAttributes::new(at, known, c) };
                let bundle = assemble_bundles(unit, &view, space, &nb, config.input_mode)?;
                let targets = unit
                    .members
                    .iter()
                    .flat_map(|&m| at[m as usize * c..(m as usize + 1) * c].iter().map(|&v| v as f64))
                    .collect();
                Ok(Item { bundle, targets })
            })?;
            items.extend(built);
        }
    }
    Ok(items)
}

/// Fits a fresh model to `corpus` by minimizing total code length with Adam.
///
/// Bundles are assembled once from ground-truth attributes. Each step sums
/// the gradients of `batch_units` items in item order, so the result does not
/// depend on the thread count.
pub fn train(corpus: &[PointCloud], config: ModelConfig, lod: &LodParams, opts: &TrainOptions) -> Result<TrainOutput> {
    let space = corpus_space(corpus)?;
    config.validate()?;
    lod.validate()?;
    if opts.batch_units == 0 || opts.targets_per_unit == 0 {
        return invalid("batch_units and targets_per_unit must be positive");
    }
    let mut model = ContextModel::new(config.clone(), opts.seed)?;
    model.check_space(space)?;
    par::with_threads(opts.threads, move || {
        let items = build_items(corpus, &config, lod, opts, space)?;
        if items.is_empty() {
            return invalid("corpus yields no trainable coding units");
        }
        let mut adam = Adam::new(opts.learning_rate);
        let mut curve = Vec::with_capacity(opts.epochs);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut order: Vec<usize> = (0..items.len()).collect();
        for _ in 0..opts.epochs {
            order.shuffle(&mut rng);
            let (mut bits, mut points) = (0.0, 0usize);
            for batch in order.chunks(opts.batch_units) {
                let results = par::try_map_range(batch.len(), |j| {
                    let it = &items[batch[j]];
                    model.loss_and_grad(&it.bundle, &it.targets, space)
                })?;
                let n: usize = batch.iter().map(|&i| items[i].bundle.targets).sum();
                let mut total: Vec<Tensor> = model.parameters().iter().map(|t| Tensor::zeros(t.shape())).collect();
                for (b, grads) in results {
                    bits += b;
                    for (acc, g) in total.iter_mut().zip(&grads) {
                        for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += v;
                        }
                    }
                }
                for g in &mut total {
                    g.data_mut().iter_mut().for_each(|v| *v /= n as f64);
                }
                points += n;
                adam.step(model.parameters_mut(), &total)?;
            }
            curve.push(bits / points as f64);
        }
        Ok(TrainOutput { model, epoch_bits_per_point: curve })
    })
}
