use std::sync::atomic::{AtomicU64, Ordering};

use super::{axis_split, gemm, transpose2d, Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape_id: u64,
}

impl Var {
    pub fn tape_id(&self) -> u64 {
        self.tape_id
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, S),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softmax { input: usize, axis: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { input: usize, axis: usize, start: usize },
    Mean(usize),
    Sum(usize),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
    op: Op<S>,
}

/// Define-by-run record of a computation. Nodes are appended in evaluation
/// order, so every node's inputs precede it.
#[derive(Debug)]
pub struct Tape<S> {
    id: u64,
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[self.expect(v)].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.expect(v)].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[self.expect(v)].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<S>> {
        let node = &self.nodes[self.expect(v)];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<S>, requires_grad: bool, op: Op<S>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var {
            index: self.nodes.len() - 1,
            tape_id: self.id,
        }
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape_id != self.id || v.index >= self.nodes.len() {
            return Err(Error::Tape(format!(
                "variable belongs to tape {} but the active tape is {}",
                v.tape_id, self.id
            )));
        }
        Ok(v.index)
    }

    fn expect(&self, v: Var) -> usize {
        self.index(v).unwrap_or_else(|e| panic!("{e}"))
    }

    fn node(&self, v: Var) -> Result<(usize, &Node<S>)> {
        let i = self.index(v)?;
        Ok((i, &self.nodes[i]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(S) -> S, op: fn(usize) -> Op<S>) -> Result<Var> {
        let (i, node) = self.node(x)?;
        let value = node.value.map(f);
        let rg = node.requires_grad;
        Ok(self.push(value, rg, op(i)))
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        op: fn(usize, usize) -> Op<S>,
    ) -> Result<Var> {
        let (ia, na) = self.node(a)?;
        let (ib, nb) = self.node(b)?;
        if na.value.shape() != nb.value.shape() {
            return Err(Error::dim(name, na.value.shape(), nb.value.shape()));
        }
        let data = na
            .value
            .data()
            .iter()
            .zip(nb.value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(na.value.shape().to_vec(), data)?;
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(value, rg, op(ia, ib)))
    }

    /// Rank-2 matrix product `[m×k]·[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, na) = self.node(a)?;
        let (ib, nb) = self.node(b)?;
        let (sa, sb) = (na.value.shape(), nb.value.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        gemm(na.value.data(), nb.value.data(), &mut out, m, k, n);
        let rg = na.requires_grad || nb.requires_grad;
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, rg, Op::MatMul(ia, ib)))
    }

    /// Batched matrix product `[B×m×k]·[B×k×n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, na) = self.node(a)?;
        let (ib, nb) = self.node(b)?;
        let (sa, sb) = (na.value.shape(), nb.value.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim("batch_matmul", sa, sb));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![S::zero(); batch * m * n];
        for ((ab, bb), cb) in na
            .value
            .data()
            .chunks_exact(m * k)
            .zip(nb.value.data().chunks_exact(k * n))
            .zip(out.chunks_exact_mut(m * n))
        {
            gemm(ab, bb, cb, m, k, n);
        }
        let rg = na.requires_grad || nb.requires_grad;
        let value = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(value, rg, Op::BatchMatMul(ia, ib)))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (i, node) = self.node(x)?;
        let value = node.value.transpose()?;
        let rg = node.requires_grad;
        Ok(self.push(value, rg, Op::Transpose(i)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let (i, node) = self.node(x)?;
        let value = Tensor::new(shape.to_vec(), node.value.data().to_vec())
            .map_err(|_| Error::dim("reshape", node.value.shape(), shape))?;
        let rg = node.requires_grad;
        Ok(self.push(value, rg, Op::Reshape(i)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Adds a length-`n` bias to every row of a `[…, n]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, nx) = self.node(x)?;
        let (ib, nb) = self.node(bias)?;
        let n = *nx.value.shape().last().unwrap();
        if nb.value.len() != n {
            return Err(Error::dim("add_bias", nx.value.shape(), nb.value.shape()));
        }
        let b = nb.value.data();
        let data = nx
            .value
            .data()
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bv)| v + bv))
            .collect();
        let rg = nx.requires_grad || nb.requires_grad;
        let value = Tensor::new(nx.value.shape().to_vec(), data)?;
        Ok(self.push(value, rg, Op::AddBias(ix, ib)))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Result<Var> {
        let (i, node) = self.node(x)?;
        let value = node.value.map(|v| v * c);
        let rg = node.requires_grad;
        Ok(self.push(value, rg, Op::Scale(i, c)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.tanh(), Op::Tanh)
    }

    /// Rectified linear unit; the derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| if v > S::zero() { v } else { S::zero() }, Op::Relu)
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (i, node) = self.node(x)?;
        let shape = node.value.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let src = node.value.data();
        if src.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericInput("softmax"));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out = vec![S::zero(); src.len()];
        for o in 0..outer {
            for q in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + q;
                let mut max = src[at(0)];
                for j in 1..len {
                    max = max.max(src[at(j)]);
                }
                let mut total = S::zero();
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total = total + e;
                }
                for j in 0..len {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        let rg = node.requires_grad;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, rg, Op::Softmax { input: i, axis }))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.node(first)?.1.value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Contract(format!("concat axis {axis} out of range")));
        }
        let mut indices = Vec::with_capacity(xs.len());
        let mut total = 0;
        let mut rg = false;
        for &x in xs {
            let (i, node) = self.node(x)?;
            let s = node.value.shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &base, s));
            }
            total += s[axis];
            rg |= node.requires_grad;
            indices.push(i);
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &indices {
                let v = &self.nodes[i].value;
                let block = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, rg, Op::Concat { inputs: indices, axis }))
    }

    /// Takes `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (i, node) = self.node(x)?;
        let shape = node.value.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Contract(format!(
                "slice [{start}, {}) of axis {axis} invalid for shape {shape:?}",
                start + len
            )));
        }
        let (outer, full, inner) = axis_split(shape, axis);
        let src = node.value.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = len;
        let rg = node.requires_grad;
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, rg, Op::Slice { input: i, axis, start }))
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let (i, node) = self.node(x)?;
        let n = S::of(node.value.len() as f64);
        let total = node.value.data().iter().fold(S::zero(), |acc, &v| acc + v);
        let rg = node.requires_grad;
        Ok(self.push(Tensor::scalar(total / n), rg, Op::Mean(i)))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let (i, node) = self.node(x)?;
        let total = node.value.data().iter().fold(S::zero(), |acc, &v| acc + v);
        let rg = node.requires_grad;
        Ok(self.push(Tensor::scalar(total), rg, Op::Sum(i)))
    }

    /// Seeds `d(loss) = 1` and accumulates gradients into every node that
    /// requires one. Calling it twice without [`Tape::zero_grad`] adds.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.index(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        if !self.nodes[li].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::new();
        grads.resize_with(li + 1, || None);
        grads[li] = Some(vec![S::one()]);
        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(existing) => {
                    for (e, v) in existing.iter_mut().zip(&g) {
                        *e = *e + *v;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        macro_rules! with_slot {
            ($j:expr, |$buf:ident| $body:expr) => {
                if let Some($buf) = grad_slot(grads, nodes, $j) {
                    $body
                }
            };
        }
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a].value.shape(), nodes[b].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                with_slot!(a, |buf| matmul_grad_lhs(g, nodes[b].value.data(), buf, m, k, n));
                with_slot!(b, |buf| matmul_grad_rhs(nodes[a].value.data(), g, buf, m, k, n));
            }
            &Op::BatchMatMul(a, b) => {
                let (sa, sb) = (nodes[a].value.shape(), nodes[b].value.shape());
                let (m, k, n) = (sa[1], sa[2], sb[2]);
                with_slot!(a, |buf| {
                    for ((gb, bb), ob) in g
                        .chunks_exact(m * n)
                        .zip(nodes[b].value.data().chunks_exact(k * n))
                        .zip(buf.chunks_exact_mut(m * k))
                    {
                        matmul_grad_lhs(gb, bb, ob, m, k, n);
                    }
                });
                with_slot!(b, |buf| {
                    for ((ab, gb), ob) in nodes[a]
                        .value
                        .data()
                        .chunks_exact(m * k)
                        .zip(g.chunks_exact(m * n))
                        .zip(buf.chunks_exact_mut(k * n))
                    {
                        matmul_grad_rhs(ab, gb, ob, m, k, n);
                    }
                });
            }
            &Op::Transpose(x) => {
                let s = out.shape();
                let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
                with_slot!(x, |buf| {
                    let mut t = vec![S::zero(); rows * cols];
                    for (gb, ob) in g.chunks_exact(rows * cols).zip(buf.chunks_exact_mut(rows * cols)) {
                        transpose2d(gb, &mut t, rows, cols);
                        add_into(ob, &t);
                    }
                });
            }
            &Op::Reshape(x) => with_slot!(x, |buf| add_into(buf, g)),
            &Op::Add(a, b) => {
                with_slot!(a, |buf| add_into(buf, g));
                with_slot!(b, |buf| add_into(buf, g));
            }
            &Op::Sub(a, b) => {
                with_slot!(a, |buf| add_into(buf, g));
                with_slot!(b, |buf| {
                    for (o, &v) in buf.iter_mut().zip(g) {
                        *o = *o - v;
                    }
                });
            }
            &Op::Mul(a, b) => {
                with_slot!(a, |buf| {
                    for ((o, &v), &y) in buf.iter_mut().zip(g).zip(nodes[b].value.data()) {
                        *o = *o + v * y;
                    }
                });
                with_slot!(b, |buf| {
                    for ((o, &v), &x) in buf.iter_mut().zip(g).zip(nodes[a].value.data()) {
                        *o = *o + v * x;
                    }
                });
            }
            &Op::AddBias(x, bias) => {
                with_slot!(x, |buf| add_into(buf, g));
                with_slot!(bias, |buf| {
                    let n = buf.len();
                    for row in g.chunks_exact(n) {
                        add_into(buf, row);
                    }
                });
            }
            &Op::Scale(x, c) => with_slot!(x, |buf| {
                for (o, &v) in buf.iter_mut().zip(g) {
                    *o = *o + v * c;
                }
            }),
            &Op::Sigmoid(x) => with_slot!(x, |buf| {
                for ((o, &v), &y) in buf.iter_mut().zip(g).zip(out.data()) {
                    *o = *o + v * y * (S::one() - y);
                }
            }),
            &Op::Tanh(x) => with_slot!(x, |buf| {
                for ((o, &v), &y) in buf.iter_mut().zip(g).zip(out.data()) {
                    *o = *o + v * (S::one() - y * y);
                }
            }),
            &Op::Relu(x) => with_slot!(x, |buf| {
                for ((o, &v), &y) in buf.iter_mut().zip(g).zip(out.data()) {
                    if y > S::zero() {
                        *o = *o + v;
                    }
                }
            }),
            &Op::Softmax { input, axis } => with_slot!(input, |buf| {
                let (outer, len, inner) = axis_split(out.shape(), axis);
                let y = out.data();
                for o in 0..outer {
                    for q in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + q;
                        let mut dot = S::zero();
                        for j in 0..len {
                            dot = dot + g[at(j)] * y[at(j)];
                        }
                        for j in 0..len {
                            buf[at(j)] = buf[at(j)] + y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }),
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for &j in inputs {
                    let len = nodes[j].value.shape()[*axis];
                    with_slot!(j, |buf| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            add_into(
                                &mut buf[o * len * inner..(o + 1) * len * inner],
                                &g[src..src + len * inner],
                            );
                        }
                    });
                    offset += len;
                }
            }
            &Op::Slice { input, axis, start } => with_slot!(input, |buf| {
                let (outer, full, inner) = axis_split(nodes[input].value.shape(), axis);
                let len = out.shape()[axis];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    add_into(
                        &mut buf[dst..dst + len * inner],
                        &g[o * len * inner..(o + 1) * len * inner],
                    );
                }
            }),
            &Op::Mean(x) => with_slot!(x, |buf| {
                let share = g[0] / S::of(buf.len() as f64);
                for o in buf.iter_mut() {
                    *o = *o + share;
                }
            }),
            &Op::Sum(x) => with_slot!(x, |buf| {
                for o in buf.iter_mut() {
                    *o = *o + g[0];
                }
            }),
        }
    }
}

/// Zero-initialised gradient buffer for node `j`, or `None` if it needs none.
fn grad_slot<'g, S: Scalar>(grads: &'g mut [Option<Vec<S>>], nodes: &[Node<S>], j: usize) -> Option<&'g mut Vec<S>> {
    if !nodes[j].requires_grad {
        return None;
    }
    Some(grads[j].get_or_insert_with(|| vec![S::zero(); nodes[j].value.len()]))
}

pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o = *o + v;
    }
}

/// `acc[m×k] += g[m×n] · bᵀ` where `b` is `[k×n]`.
fn matmul_grad_lhs<S: Scalar>(g: &[S], b: &[S], acc: &mut [S], m: usize, k: usize, n: usize) {
    let mut bt = vec![S::zero(); n * k];
    transpose2d(b, &mut bt, k, n);
    let mut prod = vec![S::zero(); m * k];
    gemm(g, &bt, &mut prod, m, n, k);
    add_into(acc, &prod);
}

/// `acc[k×n] += aᵀ · g` where `a` is `[m×k]` and `g` is `[m×n]`.
fn matmul_grad_rhs<S: Scalar>(a: &[S], g: &[S], acc: &mut [S], m: usize, k: usize, n: usize) {
    let mut at = vec![S::zero(); k * m];
    transpose2d(a, &mut at, m, k);
    let mut prod = vec![S::zero(); k * n];
    gemm(&at, g, &mut prod, k, m, n);
    add_into(acc, &prod);
}
