use std::borrow::Cow;

use super::{gemm, MatRef, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
}

#[derive(Clone, Copy, Debug)]
pub enum Operand {
    Var(Var),
    Scalar(f64),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    AddBias(Var, Var),
    Softmax(Var),
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Huber {
        input: Var,
        slope: Vec<f64>,
    },
}

impl Op {
    fn saved_bytes(&self) -> usize {
        let f = std::mem::size_of::<f64>();
        match self {
            Op::LayerNorm { xhat, inv_std, .. } => (xhat.len() + inv_std.len()) * f,
            Op::GatherRows { idx, .. } => idx.len() * std::mem::size_of::<usize>(),
            Op::Huber { slope, .. } => slope.len() * f,
            _ => 0,
        }
    }
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Computation record for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every input precedes its
/// consumer and [`Tape::backward`] is a single reverse sweep. Leaves may borrow
/// their tensors (`'p`), which lets model parameters enter the tape without
/// copies. A tape belongs to one thread; run independent samples on
/// independent tapes.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Cow<'p, Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf borrowing its value.
    pub fn param(&mut self, value: &'p Tensor) -> Var {
        self.leaf(Cow::Borrowed(value), true)
    }

    /// Trainable leaf owning its value.
    pub fn param_owned(&mut self, value: Tensor) -> Var {
        self.leaf(Cow::Owned(value), true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(Cow::Owned(value), false)
    }

    pub fn constant_ref(&mut self, value: &'p Tensor) -> Var {
        self.leaf(Cow::Borrowed(value), false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Bytes held by owned node values and saved reverse-pass buffers.
    /// Borrowed leaves are not counted.
    pub fn accounted_bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| {
                let value = match &n.value {
                    Cow::Owned(t) => t.bytes(),
                    Cow::Borrowed(_) => 0,
                };
                value + n.op.saved_bytes()
            })
            .sum()
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).expect_matrix(op)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    /// Pointwise operation. Binary kinds take a tensor of identical shape
    /// or a scalar; `Scale` requires a scalar and `Relu` ignores `b`.
    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Operand>) -> Result<Var> {
        match (kind, b) {
            (Elementwise::Relu, _) => self.relu(a),
            (Elementwise::Add, Some(Operand::Var(b))) => self.add(a, b),
            (Elementwise::Add, Some(Operand::Scalar(s))) => self.add_scalar(a, s),
            (Elementwise::Sub, Some(Operand::Var(b))) => self.sub(a, b),
            (Elementwise::Sub, Some(Operand::Scalar(s))) => self.add_scalar(a, -s),
            (Elementwise::Mul, Some(Operand::Var(b))) => self.mul(a, b),
            (Elementwise::Mul | Elementwise::Scale, Some(Operand::Scalar(s))) => Ok(self.scale(a, s)),
            (kind, b) => Err(Error::shape(
                "elementwise",
                format!("{kind:?} does not accept operand {b:?}"),
            )),
        }
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + s);
        Ok(self.push(out, Op::AddScalar(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        Ok(self.push(out, Op::Relu(a), &[a]))
    }

    /// Adds a length-`c` bias to every row of an `r × c` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.matrix(a, "add_bias")?;
        let tb = self.value(bias);
        if tb.len() != c || tb.rank() != 1 {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} for matrix [{r}, {c}]", tb.shape()),
            ));
        }
        let ta = self.value(a);
        let mut data = ta.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let out = Tensor::from_parts(vec![r, c], data);
        Ok(self.push(out, Op::AddBias(a, bias), &[a, bias]))
    }

    /// Row-wise softmax. Entries where `mask` is `false` receive exactly zero
    /// weight (additive negative infinity before exponentiation).
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.matrix(a, "softmax_rows")?;
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::shape(
                    "softmax_rows",
                    format!("mask of {} entries for matrix [{r}, {c}]", m.len()),
                ));
            }
        }
        let out = softmax_rows_masked(self.value(a).data(), r, c, mask)?;
        Ok(self.push(Tensor::from_parts(vec![r, c], out), Op::Softmax(a), &[a]))
    }

    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Invalid(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (r, c) = self.matrix(a, "layer_norm")?;
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != c || b.len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("gamma {:?} / beta {:?} for matrix [{r}, {c}]", g.shape(), b.shape()),
            ));
        }
        let x = self.value(a).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = g.data()[j] * h + b.data()[j];
            }
        }
        let op = Op::LayerNorm {
            input: a,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        Ok(self.push(Tensor::from_parts(vec![r, c], out), op, &[a, gamma, beta]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "no parts"))?;
        let (r, _) = self.matrix(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.matrix(p, "concat_cols")?;
            if pr != r {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {r} and {pr} differ"),
                ));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::from_parts(vec![r, total], out);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Selects rows of `table` by index.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.matrix(table, "gather_rows")?;
        if idx.is_empty() {
            return Err(Error::shape("gather_rows", "empty index list"));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::Invalid(format!(
                    "gather index {i} out of range for table with {r} rows"
                )));
            }
            out.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_parts(vec![idx.len(), c], out);
        let op = Op::GatherRows {
            table,
            idx: idx.to_vec(),
        };
        Ok(self.push(out, op, &[table]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Mean Huber loss between `pred` and a fixed `target`.
    pub fn huber(&mut self, pred: Var, target: &Tensor, delta: f64) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(Error::Invalid(format!(
                "huber delta must be positive, got {delta}"
            )));
        }
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape(
                "huber",
                format!("{:?} vs {:?}", p.shape(), target.shape()),
            ));
        }
        let n = p.len() as f64;
        let mut total = 0.0;
        let mut slope = Vec::with_capacity(p.len());
        for (&yh, &y) in p.data().iter().zip(target.data()) {
            let r = yh - y;
            total += huber_value(r, delta);
            slope.push(r.clamp(-delta, delta) / n);
        }
        let out = Tensor::scalar(total / n);
        Ok(self.push(out, Op::Huber { input: pred, slope }, &[pred]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.wants(v) {
                let len = self.nodes[v.0].value.len();
                f(grads[v.0].get_or_insert_with(|| vec![0.0; len]));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                acc(*a, &mut |ga| {
                    gemm(m, n, k, MatRef::row_major(g, n), MatRef::transposed(tb.data(), n), ga, true)
                });
                acc(*b, &mut |gb| {
                    gemm(k, m, n, MatRef::transposed(ta.data(), k), MatRef::row_major(g, n), gb, true)
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (out.rows(), out.cols());
                acc(*a, &mut |ga| {
                    for x in 0..r {
                        for y in 0..c {
                            ga[y * r + x] += g[x * c + y];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, d)| *x -= d));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).zip(tb).for_each(|((x, d), y)| *x += d * y)
                });
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(g).zip(ta).for_each(|((x, d), y)| *x += d * y)
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, d)| *x += d * s)),
            Op::AddScalar(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for ((o, d), xi) in ga.iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *o += d;
                        }
                    }
                });
            }
            Op::AddBias(a, bias) => {
                let c = out.cols();
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*bias, &mut |gb| {
                    for row in g.chunks_exact(c) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Softmax(a) => {
                let c = out.cols();
                let y = out.data();
                acc(*a, &mut |ga| {
                    for ((gr, yr), gar) in g.chunks_exact(c).zip(y.chunks_exact(c)).zip(ga.chunks_exact_mut(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(d, p)| d * p).sum();
                        for ((o, d), p) in gar.iter_mut().zip(gr).zip(yr) {
                            *o += p * (d - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = out.cols();
                let gv = self.value(*gamma).data();
                acc(*beta, &mut |gb| {
                    for row in g.chunks_exact(c) {
                        add_into(gb, row);
                    }
                });
                acc(*gamma, &mut |gg| {
                    for (row, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ((o, d), h) in gg.iter_mut().zip(row).zip(hrow) {
                            *o += d * h;
                        }
                    }
                });
                acc(*input, &mut |gx| {
                    let mut dxhat = vec![0.0; c];
                    for (ri, (row, hrow)) in g.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate() {
                        for j in 0..c {
                            dxhat[j] = row[j] * gv[j];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(hrow).map(|(d, h)| d * h).sum();
                        let k = inv_std[ri] / c as f64;
                        let out_row = &mut gx[ri * c..(ri + 1) * c];
                        for j in 0..c {
                            out_row[j] += k * (c as f64 * dxhat[j] - s1 - hrow[j] * s2);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (r, total) = (out.rows(), out.cols());
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(p, &mut |gp| {
                        for x in 0..r {
                            add_into(&mut gp[x * w..(x + 1) * w], &g[x * total + offset..x * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::GatherRows { table, idx } => {
                let c = out.cols();
                acc(*table, &mut |gt| {
                    for (row, &src) in g.chunks_exact(c).zip(idx) {
                        add_into(&mut gt[src * c..(src + 1) * c], row);
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0] / n))
            }
            Op::Huber { input, slope } => {
                acc(*input, &mut |ga| {
                    ga.iter_mut().zip(slope).for_each(|(x, s)| *x += g[0] * s)
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn huber_value(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Row-wise stabilised softmax over a row-major `r × c` buffer.
pub(crate) fn softmax_rows_masked(x: &[f64], r: usize, c: usize, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &x[i * c..(i + 1) * c];
        let keep = |j: usize| mask.is_none_or(|m| m[i * c + j]);
        let max = (0..c)
            .filter(|&j| keep(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Invalid(format!(
                "softmax row {i} is fully masked (node without neighbours or self-loop)"
            )));
        }
        let dst = &mut out[i * c..(i + 1) * c];
        let mut total = 0.0;
        for j in 0..c {
            if keep(j) {
                let e = (row[j] - max).exp();
                dst[j] = e;
                total += e;
            }
        }
        dst.iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}

/// Gradients produced by [`Tape::backward`], retained for leaves only.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` when the leaf did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2).unwrap());
        let a = tape.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let z = tape.constant(m(&[&[0.0], &[0.0]]));
        let ia = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(ia), tape.value(a));
        let iz = tape.matmul(i, z).unwrap();
        assert_eq!(tape.value(iz).data(), &[0.0, 0.0]);
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(m(&[&[1.0, 2.0]]));
        let b = tape.constant(m(&[&[0.0, 1.0]]));
        let p = tape.elementwise(Elementwise::Mul, a, Some(Operand::Var(b))).unwrap();
        assert_eq!(tape.value(p).data(), &[0.0, 2.0]);
        let z = tape.elementwise(Elementwise::Add, a, Some(Operand::Scalar(0.0))).unwrap();
        assert_eq!(tape.value(z), tape.value(a));
        let r = tape.constant(Tensor::new(&[2], vec![-1.0, 2.0]).unwrap());
        let r = tape.elementwise(Elementwise::Relu, r, None).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
        assert!(tape.elementwise(Elementwise::Add, a, Some(Operand::Var(r))).is_err());
        assert!(tape.elementwise(Elementwise::Scale, a, Some(Operand::Var(b))).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(m(&[&[1.0, 1.0, 1.0], &[0.0, 2f64.ln(), f64::MIN]]));
        let s = tape.softmax_rows(a, Some(&[true, true, true, true, true, false])).unwrap();
        let v = tape.value(s).data();
        for x in &v[..3] {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((v[3] - 1.0 / 3.0).abs() < 1e-15);
        assert!((v[4] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(v[5], 0.0);

        let b = tape.constant(m(&[&[5.0, 9.0, 2.0]]));
        let s = tape.softmax_rows(b, Some(&[true, false, true])).unwrap();
        let v = tape.value(s).data();
        assert_eq!(v[1], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fully_masked_row_names_the_row() {
        let mut tape = Tape::new();
        let a = tape.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let err = tape.softmax_rows(a, Some(&[true, false, false, false])).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn layer_norm_closed_forms() {
        let eps = 1e-5;
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::full(&[3], 1.0).unwrap());
        let b = tape.constant(Tensor::zeros(&[3]).unwrap());
        let a = tape.constant(m(&[&[1.0, 1.0, 1.0]]));
        let y = tape.layer_norm(a, g, b, eps).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);

        let g2 = tape.constant(Tensor::full(&[2], 1.0).unwrap());
        let b2 = tape.constant(Tensor::zeros(&[2]).unwrap());
        let a2 = tape.constant(m(&[&[-1.0, 1.0]]));
        let y2 = tape.layer_norm(a2, g2, b2, eps).unwrap();
        let k = (1.0 / (1.0 + eps)).sqrt();
        let v = tape.value(y2).data();
        assert!((v[0] + k).abs() < 1e-15 && (v[1] - k).abs() < 1e-15);
        assert!(tape.layer_norm(a2, g2, b2, 0.0).is_err());
    }

    #[test]
    fn concat_cols_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(m(&[&[1.0], &[2.0]]));
        let b = tape.constant(m(&[&[3.0], &[4.0]]));
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(c), &m(&[&[1.0, 3.0], &[2.0, 4.0]]));
        let single = tape.concat_cols(&[a]).unwrap();
        assert_eq!(tape.value(single), tape.value(a));
        let bad = tape.constant(m(&[&[1.0]]));
        assert!(tape.concat_cols(&[a, bad]).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones_and_zero_scale_is_zeros() {
        let x = Tensor::new(&[2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&x);
        let s = tape.sum(v);
        let g = tape.backward(s).unwrap();
        assert!(g.get(v).unwrap().data().iter().all(|&d| d == 1.0));

        let mut tape = Tape::new();
        let v = tape.param(&x);
        let z = tape.scale(v, 0.0);
        let s = tape.sum(z);
        let g = tape.backward(s).unwrap();
        assert!(g.get(v).unwrap().data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::zeros(&[2, 2]).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&x);
        assert!(tape.backward(v).is_err());
    }

    #[test]
    fn huber_branches() {
        let mut tape = Tape::new();
        let target = Tensor::zeros(&[1, 1]).unwrap();
        for (r, want) in [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5), (-2.0, 1.5)] {
            let p = tape.constant(Tensor::full(&[1, 1], r).unwrap());
            let l = tape.huber(p, &target, 1.0).unwrap();
            assert_eq!(tape.value(l).item(), want);
        }
        let p = tape.constant(Tensor::zeros(&[1, 1]).unwrap());
        assert!(tape.huber(p, &target, 0.0).is_err());
    }

    #[test]
    fn gather_rows_checks_range() {
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::zeros(&[3, 2]).unwrap());
        assert!(tape.gather_rows(t, &[0, 3]).is_err());
        let g = tape.gather_rows(t, &[2, 2, 0]).unwrap();
        assert_eq!(tape.shape(g), &[3, 2]);
    }
}
