use std::f64::consts::LN_2;

use super::Tensor;
use crate::entropy::laplace;
use crate::error::{invalid, Error, Result};
use crate::par;

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Softmax { x: Var, axis: usize },
    Sum { x: Var, axis: usize },
    Mean { x: Var, axis: usize },
    Gather { x: Var, rows: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Broadcast { x: Var, map: Vec<usize> },
    Reshape(Var),
    LaplaceNll { mu: Var, b: Var, target: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Relu input signs, kept for finite-difference kink detection.
    kink: Option<Vec<bool>>,
}

/// Ordered record of operations, replayed backwards by [`Tape::backward`].
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!("axis {axis} out of range for {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Output-to-input flat index map for a right-aligned broadcast.
fn broadcast_map(from: &[usize], to: &[usize]) -> Result<Vec<usize>> {
    let err = || Error::Shape(format!("cannot broadcast {from:?} to {to:?}"));
    if from.len() > to.len() {
        return Err(err());
    }
    let nd = to.len();
    let off = nd - from.len();
    let mut strides = vec![0usize; nd];
    let mut s = 1;
    for d in (0..from.len()).rev() {
        if from[d] == to[d + off] {
            strides[d + off] = s;
        } else if from[d] != 1 {
            return Err(err());
        }
        s *= from[d];
    }
    let n: usize = to.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; nd];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for d in (0..nd).rev() {
            idx[d] += 1;
            cur += strides[d];
            if idx[d] < to[d] {
                break;
            }
            cur -= strides[d] * to[d];
            idx[d] = 0;
        }
    }
    Ok(map)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[n x m] += a[n x k] * b[k x m]`, split over output rows.
fn matmul_into(out: &mut [f64], a: &[f64], b: &[f64], k: usize, m: usize) {
    par::for_each_row_block(out, m, 32, |r0, chunk| {
        for (ri, row) in chunk.chunks_mut(m).enumerate() {
            let arow = &a[(r0 + ri) * k..(r0 + ri + 1) * k];
            for (p, &av) in arow.iter().enumerate() {
                for (o, &bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                    *o += av * bv;
                }
            }
        }
    });
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

impl Tape {
    /// A tape that records operations for [`Tape::backward`].
    pub fn new() -> Self {
        Self { nodes: Vec::new(), record: true }
    }

    /// A tape that only evaluates.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), record: false }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        let requires_grad = self.record;
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad, kink: None });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false, kink: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Sign pattern of every relu input evaluated so far.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes.iter().filter_map(|n| n.kink.as_ref()).flatten().copied().collect()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad, kink: None });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    /// Matrix product of `[n, k]` and `[k, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * m];
        matmul_into(&mut out, self.value(a).data(), self.value(b).data(), k, m);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(a, b, what)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.map(x, |v| v * c);
        self.push(v, Op::Scale(x, c), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.map(x, |v| v.max(0.0));
        let out = self.push(v, Op::Relu(x), &[x]);
        if self.record {
            let signs = self.value(x).data().iter().map(|&v| v > 0.0).collect();
            self.nodes[out.0].kink = Some(signs);
        }
        out
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.map(x, f64::exp);
        self.push(v, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.map(x, f64::ln);
        self.push(v, Op::Log(x), &[x])
    }

    /// `ln(1 + e^x)`.
    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.map(x, softplus);
        self.push(v, Op::Softplus(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = split_axis(self.shape(x), axis)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |t: usize| (o * len + t) * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for t in 0..len {
                    mx = mx.max(src[at(t)]);
                }
                let mut z = 0.0;
                for t in 0..len {
                    let e = (src[at(t)] - mx).exp();
                    out[at(t)] = e;
                    z += e;
                }
                for t in 0..len {
                    out[at(t)] /= z;
                }
            }
        }
        let v = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(v, Op::Softmax { x, axis }, &[x]))
    }

    fn reduce(&self, x: Var, axis: usize, scale_by_len: bool) -> Result<Tensor> {
        let shape = self.shape(x);
        let (outer, len, inner) = split_axis(shape, axis)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for t in 0..len {
                let row = &src[(o * len + t) * inner..(o * len + t + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if scale_by_len {
            out.iter_mut().for_each(|v| *v /= len as f64);
        }
        let mut new_shape = shape.to_vec();
        new_shape.remove(axis);
        Tensor::new(new_shape, out)
    }

    /// Sum over `axis`, which is removed from the shape.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.reduce(x, axis, false)?;
        Ok(self.push(v, Op::Sum { x, axis }, &[x]))
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.reduce(x, axis, true)?;
        Ok(self.push(v, Op::Mean { x, axis }, &[x]))
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let flat = self.reshape(x, &[n])?;
        self.sum(flat, 0)
    }

    /// Selects rows (first-axis slices) in the given order.
    pub fn gather(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        if shape.is_empty() {
            return Err(Error::Shape("gather on a scalar".into()));
        }
        let r = shape[0];
        let row_len: usize = shape[1..].iter().product();
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Shape(format!("gather row {bad} out of {r}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * row_len);
        for &i in rows {
            out.extend_from_slice(&src[i * row_len..(i + 1) * row_len]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[0] = rows.len();
        let v = Tensor::new(new_shape, out)?;
        Ok(self.push(v, Op::Gather { x, rows: rows.to_vec() }, &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Shape("concat of nothing".into()));
        };
        let base = self.shape(first).to_vec();
        let (outer, _, inner) = split_axis(&base, axis)?;
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Shape(format!("concat {s:?} with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis];
                out.extend_from_slice(&self.value(x).data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Concat { xs: xs.to_vec(), axis }, xs))
    }

    /// Right-aligned broadcast to `shape`, repeating size-1 and missing axes.
    pub fn broadcast(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let map = broadcast_map(self.shape(x), shape)?;
        let src = self.value(x).data();
        let v = Tensor::new(shape.to_vec(), map.iter().map(|&i| src[i]).collect())?;
        Ok(self.push(v, Op::Broadcast { x, map }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Total code length in bits of `target` under discretized Laplace
    /// distributions with locations `mu` and scales `b`.
    pub fn laplace_nll(&mut self, mu: Var, b: Var, target: &[f64]) -> Result<Var> {
        self.same_shape(mu, b, "laplace_nll")?;
        if self.value(mu).numel() != target.len() {
            return Err(Error::Shape(format!("laplace_nll: {} targets for {:?}", target.len(), self.shape(mu))));
        }
        if self.value(b).data().iter().any(|&s| !(s > 0.0)) {
            return invalid("laplace_nll needs positive scales");
        }
        let bits = laplace::bits(target, self.value(mu).data(), self.value(b).data());
        Ok(self.push(Tensor::scalar(bits), Op::LaplaceNll { mu, b, target: target.to_vec() }, &[mu, b]))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut leaves: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_op(node, &g, &mut grads)?;
            if let Op::Leaf = node.op {
                leaves[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
            }
        }
        Ok(Gradients { grads: leaves })
    }

    fn backward_op(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].requires_grad {
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
                f(slot);
            }
        };
        let val = |v: Var| nodes[v.0].value.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (rows, k, m) = (sa[0], sa[1], sb[1]);
                acc(*a, &mut |ga| {
                    let bt = transpose(val(*b), k, m);
                    matmul_into(ga, g, &bt, m, k);
                });
                acc(*b, &mut |gb| {
                    let at = transpose(val(*a), rows, k);
                    matmul_into(gb, &at, g, rows, m);
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, &d)| *x += d));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, &d)| *x -= d));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((x, &d), &o) in ga.iter_mut().zip(g).zip(vb) {
                        *x += d * o;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, &d), &o) in gb.iter_mut().zip(g).zip(va) {
                        *x += d * o;
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(v, &d)| *v += d * c)),
            Op::Relu(x) => {
                let vx = val(*x);
                acc(*x, &mut |gx| {
                    for ((v, &d), &i) in gx.iter_mut().zip(g).zip(vx) {
                        if i > 0.0 {
                            *v += d;
                        }
                    }
                })
            }
            Op::Exp(x) => acc(*x, &mut |gx| {
                for ((v, &d), &o) in gx.iter_mut().zip(g).zip(out) {
                    *v += d * o;
                }
            }),
            Op::Log(x) => {
                let vx = val(*x);
                acc(*x, &mut |gx| {
                    for ((v, &d), &i) in gx.iter_mut().zip(g).zip(vx) {
                        *v += d / i;
                    }
                })
            }
            Op::Softplus(x) => {
                let vx = val(*x);
                acc(*x, &mut |gx| {
                    for ((v, &d), &i) in gx.iter_mut().zip(g).zip(vx) {
                        *v += d * sigmoid(i);
                    }
                })
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis)?;
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |t: usize| (o * len + t) * inner + i;
                            let mut dot = 0.0;
                            for t in 0..len {
                                dot += g[at(t)] * out[at(t)];
                            }
                            for t in 0..len {
                                gx[at(t)] += out[at(t)] * (g[at(t)] - dot);
                            }
                        }
                    }
                })
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let (outer, len, inner) = split_axis(nodes[x.0].value.shape(), *axis)?;
                let c = if let Op::Mean { .. } = node.op { 1.0 / len as f64 } else { 1.0 };
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for t in 0..len {
                            let row = &mut gx[(o * len + t) * inner..(o * len + t + 1) * inner];
                            for (v, &d) in row.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                *v += d * c;
                            }
                        }
                    }
                })
            }
            Op::Gather { x, rows } => {
                let shape = nodes[x.0].value.shape();
                let row_len: usize = shape[1..].iter().product();
                acc(*x, &mut |gx| {
                    for (r, &i) in rows.iter().enumerate() {
                        let src = &g[r * row_len..(r + 1) * row_len];
                        for (v, &d) in gx[i * row_len..(i + 1) * row_len].iter_mut().zip(src) {
                            *v += d;
                        }
                    }
                })
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis)?;
                let mut start = 0;
                for &x in xs {
                    let len = nodes[x.0].value.shape()[*axis];
                    acc(x, &mut |gx| {
                        for o in 0..outer {
                            let src = &g[(o * total + start) * inner..(o * total + start + len) * inner];
                            for (v, &d) in gx[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                                *v += d;
                            }
                        }
                    });
                    start += len;
                }
            }
            Op::Broadcast { x, map } => acc(*x, &mut |gx| {
                for (&i, &d) in map.iter().zip(g) {
                    gx[i] += d;
                }
            }),
            Op::Reshape(x) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(v, &d)| *v += d)),
            Op::LaplaceNll { mu, b, target } => {
                let (vm, vb) = (val(*mu), val(*b));
                let partial: Vec<(f64, f64)> = target
                    .iter()
                    .zip(vm)
                    .zip(vb)
                    .map(|((&x, &m), &s)| laplace::bin_log_prob_grad(x - m, s))
                    .collect();
                let scale = -g[0] / LN_2;
                acc(*mu, &mut |gm| gm.iter_mut().zip(&partial).for_each(|(v, p)| *v += scale * p.0));
                acc(*b, &mut |gb| gb.iter_mut().zip(&partial).for_each(|(v, p)| *v += scale * p.1));
            }
        }
        Ok(())
    }
}
