//! Two-stage vector attention over neighborhood bundles.
//!
//! Stage 1 attends, for every neighbor `k` of a target, over that neighbor's
//! own group of `k2` points, with the neighbor itself as query. Stage 2
//! attends over the `k1` stage-1 outputs with a zero query. A head maps the
//! result to a normalized location offset and a scale per channel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LaplaceParams, ModelConfig};
use crate::error::{Error, Result};
use crate::neighborhood::{InputMode, UnitBundle};
use crate::par;
use crate::pointcloud::AttributeSpace;
use crate::tensor::{read_archive, write_archive, Tape, Tensor, Var};

/// Targets per inference chunk; bounds memory, does not change results.
const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug)]
struct Mlp {
    first: usize,
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    embed: Mlp,
    key1: Mlp,
    query1: Mlp,
    value1: Mlp,
    dmul1: Mlp,
    dbias1: Mlp,
    score1: Mlp,
    key2: Mlp,
    value2: Mlp,
    dmul2: Mlp,
    dbias2: Mlp,
    score2: Mlp,
    head: Mlp,
}

type Shapes = Vec<(String, Vec<usize>)>;

fn layout(cfg: &ModelConfig) -> (Layout, Shapes) {
    let (d, h, c) = (cfg.feature_dim, cfg.hidden_dim, cfg.channels);
    let mut shapes: Shapes = Vec::new();
    let mut mlp = |name: &str, input: usize, output: usize| {
        let first = shapes.len();
        shapes.push((format!("{name}.0.weight"), vec![input, h]));
        shapes.push((format!("{name}.0.bias"), vec![h]));
        shapes.push((format!("{name}.1.weight"), vec![h, output]));
        shapes.push((format!("{name}.1.bias"), vec![output]));
        Mlp { first }
    };
    let l = Layout {
        embed: mlp("stage1.embed", c + 3, d),
        key1: mlp("stage1.key", d, d),
        query1: mlp("stage1.query", d, d),
        value1: mlp("stage1.value", d, d),
        dmul1: mlp("stage1.delta_mul", 3, d),
        dbias1: mlp("stage1.delta_bias", 3, d),
        score1: mlp("stage1.score", d, d),
        key2: mlp("stage2.key", d, d),
        value2: mlp("stage2.value", d, d),
        dmul2: mlp("stage2.delta_mul", 3, d),
        dbias2: mlp("stage2.delta_bias", 3, d),
        score2: mlp("stage2.score", d, d),
        head: mlp("head", d, 2 * c),
    };
    (l, shapes)
}

/// Distribution parameters before quantization, in attribute units,
/// `targets x channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawParams {
    pub targets: usize,
    pub channels: usize,
    pub mu: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextModel {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl PartialEq for Layout {
    fn eq(&self, _: &Self) -> bool {
        // Fully determined by the config.
        true
    }
}

fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}

impl ContextModel {
    /// Glorot-uniform weights, zero biases; the head starts at `b = max/16`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, shapes) = layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(shapes.len());
        for (name, shape) in &shapes {
            let t = if shape.len() == 2 {
                let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let a = if name.starts_with("head.1") { a * 0.1 } else { a };
                Tensor::from_fn(shape, |_| rng.random_range(-a..a))
            } else if name == "head.1.bias" {
                let c = config.channels;
                Tensor::from_fn(shape, |i| if i < c { 0.0 } else { softplus_inv(1.0 / 16.0) })
            } else {
                Tensor::zeros(shape)
            };
            values.push(t);
        }
        let names = shapes.into_iter().map(|(n, _)| n).collect();
        Ok(Self { config, layout, names, values })
    }

    fn from_parts(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (layout, shapes) = layout(&config);
        if shapes.len() != tensors.len() {
            return Err(Error::Format(format!("checkpoint has {} tensors, config needs {}", tensors.len(), shapes.len())));
        }
        for ((name, shape), (got, t)) in shapes.iter().zip(&tensors) {
            if name != got || shape.as_slice() != t.shape() {
                return Err(Error::Format(format!("checkpoint tensor {got} {:?} where {name} {shape:?} expected", t.shape())));
            }
        }
        let (names, values) = tensors.into_iter().unzip();
        Ok(Self { config, layout, names, values })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.values
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Rejects a model whose channel count does not match `space`.
    pub fn check_space(&self, space: AttributeSpace) -> Result<()> {
        if self.config.channels != space.channels() {
            return Err(Error::Invalid(format!(
                "model predicts {} channels but the stream has {}",
                self.config.channels,
                space.channels()
            )));
        }
        Ok(())
    }

    pub fn content_hash(&self) -> [u8; 32] {
        let bytes = save_checkpoint(self);
        bytes[bytes.len() - 32..].try_into().unwrap()
    }

    /// Places every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|t| tape.param(t.clone())).collect()
    }

    fn mlp(&self, tape: &mut Tape, p: &[Var], m: Mlp, x: Var) -> Result<Var> {
        let h = self.linear(tape, p[m.first], p[m.first + 1], x)?;
        let h = tape.relu(h);
        self.linear(tape, p[m.first + 2], p[m.first + 3], h)
    }

    fn linear(&self, tape: &mut Tape, w: Var, b: Var, x: Var) -> Result<Var> {
        let y = tape.matmul(x, w)?;
        let shape = tape.shape(y).to_vec();
        let bias = tape.broadcast(b, &shape)?;
        tape.add(y, bias)
    }

    /// One attention stage over `groups` sets of `t` elements.
    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        tape: &mut Tape,
        p: &[Var],
        (key, dmul, dbias, score, value): (Mlp, Mlp, Mlp, Mlp, Mlp),
        f: Var,
        z: Var,
        query: Option<Var>,
        groups: usize,
        t: usize,
    ) -> Result<Var> {
        let d = self.config.feature_dim;
        let k = self.mlp(tape, p, key, f)?;
        let rel = match query {
            Some(q) => tape.sub(k, q)?,
            None => k,
        };
        let dm = self.mlp(tape, p, dmul, z)?;
        let db = self.mlp(tape, p, dbias, z)?;
        let pre = tape.mul(dm, rel)?;
        let pre = tape.add(pre, db)?;
        let s = self.mlp(tape, p, score, pre)?;
        let s = tape.reshape(s, &[groups, t, d])?;
        let w = tape.softmax(s, 1)?;
        let v = self.mlp(tape, p, value, f)?;
        let v = tape.add(v, db)?;
        let v = tape.reshape(v, &[groups, t, d])?;
        let wv = tape.mul(w, v)?;
        tape.sum(wv, 1)
    }

    /// Location and scale, each `targets x channels`, in attribute units.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], bundle: &UnitBundle, space: AttributeSpace) -> Result<(Var, Var)> {
        self.check_space(space)?;
        let (b, k1, k2, c) = (bundle.targets, bundle.k1, bundle.k2, bundle.channels);
        if b == 0 {
            return Err(Error::Shape("empty bundle".into()));
        }
        let l = self.layout;
        let d = self.config.feature_dim;
        let n1 = b * k1 * k2;

        let mut input = Vec::with_capacity(n1 * (c + 3));
        for r in 0..n1 {
            input.extend_from_slice(&bundle.xbar[r * c..(r + 1) * c]);
            input.extend_from_slice(&bundle.zbar[r * 3..(r + 1) * 3]);
        }
        let x = tape.constant(Tensor::new(vec![n1, c + 3], input)?);
        let z1 = tape.constant(Tensor::new(vec![n1, 3], bundle.zbar.clone())?);
        let z2 = tape.constant(Tensor::new(vec![b * k1, 3], bundle.zbar2.clone())?);

        let f = self.mlp(tape, p, l.embed, x)?;
        let centers: Vec<usize> = (0..b * k1).map(|g| g * k2).collect();
        let q = tape.gather(f, &centers)?;
        let q = self.mlp(tape, p, l.query1, q)?;
        let q = tape.reshape(q, &[b * k1, 1, d])?;
        let q = tape.broadcast(q, &[b * k1, k2, d])?;
        let q = tape.reshape(q, &[n1, d])?;
        let stage1 = (l.key1, l.dmul1, l.dbias1, l.score1, l.value1);
        let f1 = self.attention(tape, p, stage1, f, z1, Some(q), b * k1, k2)?;
        let stage2 = (l.key2, l.dmul2, l.dbias2, l.score2, l.value2);
        let f2 = self.attention(tape, p, stage2, f1, z2, None, b, k1)?;
        let out = self.mlp(tape, p, l.head, f2)?;

        let select = |offset: usize| Tensor::from_fn(&[2 * c, c], |i| f64::from(i / c == i % c + offset));
        let sel_mu = tape.constant(select(0));
        let sel_beta = tape.constant(select(c));
        let mu_n = tape.matmul(out, sel_mu)?;
        let beta = tape.matmul(out, sel_beta)?;
        let maxes = Tensor::from_fn(&[c], |ch| space.max_attri(ch) as f64);
        let maxes = tape.constant(maxes);
        let maxes = tape.broadcast(maxes, &[b, c])?;
        let mu = tape.mul(mu_n, maxes)?;
        let mu = match self.config.input_mode {
            InputMode::Residual => {
                let pred = Tensor::new(vec![b, c], bundle.pred.iter().map(|p| p.to_f64()).collect())?;
                let pred = tape.constant(pred);
                tape.add(mu, pred)?
            }
            InputMode::Raw => mu,
        };
        let scale = tape.softplus(beta);
        let scale = tape.mul(scale, maxes)?;
        Ok((mu, scale))
    }

    /// Unquantized parameters for every target of `bundle`.
    pub fn raw_params(&self, bundle: &UnitBundle, space: AttributeSpace) -> Result<RawParams> {
        let chunks = bundle.targets.div_ceil(CHUNK);
        let parts = par::try_map_range(chunks, |i| {
            let sub = bundle.rows(i * CHUNK..((i + 1) * CHUNK).min(bundle.targets));
            let mut tape = Tape::inference();
            let p = self.bind(&mut tape);
            let (mu, b) = self.forward(&mut tape, &p, &sub, space)?;
            Ok((tape.value(mu).data().to_vec(), tape.value(b).data().to_vec()))
        })?;
        let (mut mu, mut b) = (Vec::new(), Vec::new());
        for (m, s) in parts {
            mu.extend(m);
            b.extend(s);
        }
        Ok(RawParams { targets: bundle.targets, channels: bundle.channels, mu, b })
    }

    /// Quantized parameters, `targets x channels`.
    pub fn predict_params(&self, bundle: &UnitBundle, space: AttributeSpace) -> Result<Vec<LaplaceParams>> {
        let raw = self.raw_params(bundle, space)?;
        let c = raw.channels;
        Ok(raw
            .mu
            .iter()
            .zip(&raw.b)
            .enumerate()
            .map(|(i, (&m, &s))| LaplaceParams::quantize(m, s, space, i % c))
            .collect())
    }

    /// Code length in bits of `targets` (`targets x channels`) and its gradient.
    pub fn loss_and_grad(&self, bundle: &UnitBundle, targets: &[f64], space: AttributeSpace) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let (mu, b) = self.forward(&mut tape, &p, bundle, space)?;
        let loss = tape.laplace_nll(mu, b, targets)?;
        let bits = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        let g = p
            .iter()
            .zip(&self.values)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((bits, g))
    }

    /// Code length in bits without gradients.
    pub fn loss(&self, bundle: &UnitBundle, targets: &[f64], space: AttributeSpace) -> Result<f64> {
        let raw = self.raw_params(bundle, space)?;
        Ok(crate::entropy::laplace::bits(targets, &raw.mu, &raw.b))
    }
}

/// Serializes the config and every parameter into a tensor archive.
pub fn save_checkpoint(model: &ContextModel) -> Vec<u8> {
    let tensors: Vec<(String, Tensor)> = model.names.iter().cloned().zip(model.values.iter().cloned()).collect();
    write_archive(&model.config.to_toml(), &tensors)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<ContextModel> {
    let archive = read_archive(bytes)?;
    let config = ModelConfig::from_toml(&archive.manifest)?;
    ContextModel::from_parts(config, archive.tensors)
}
