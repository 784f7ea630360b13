//! Tape-style reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every training step. Nodes are appended in
//! evaluation order, so every parent index is smaller than its child's and a
//! reverse sweep over the node list is a valid topological order.

use std::collections::HashMap;

use super::{Grads, ParamSet, Tensor};
use crate::error::{contract, Error, Result};

/// Inputs to `log` are clamped to this floor.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(usize),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Minimum(NodeId, NodeId),
    Maximum(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Affine(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SelectRows(NodeId, Vec<usize>),
    Pick(NodeId, Vec<usize>),
    Concat(Vec<NodeId>, usize),
    Narrow {
        src: NodeId,
        axis: usize,
        start: usize,
    },
    Reshape(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Minimum(..) => "minimum",
            Op::Maximum(..) => "maximum",
            Op::AddRow(..) => "add_row",
            Op::MatMul(..) => "matmul",
            Op::Affine(..) => "affine",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SelectRows(..) => "select_rows",
            Op::Pick(..) => "pick",
            Op::Concat(..) => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Reshape(_) => "reshape",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Minimum(a, b)
            | Op::Maximum(a, b)
            | Op::AddRow(a, b)
            | Op::MatMul(a, b) => vec![*a, *b],
            Op::Affine(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SelectRows(a, _)
            | Op::Pick(a, _)
            | Op::Narrow { src: a, .. }
            | Op::Reshape(a) => vec![*a],
            Op::Concat(parts, _) => parts.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_names: Vec<String>,
    param_nodes: HashMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let requires_grad = match &op {
            Op::Param(_) => true,
            Op::Leaf => false,
            other => other.parents().iter().any(|p| self.nodes[p.0].requires_grad),
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        id
    }

    fn v(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    // ---- leaves ----

    /// Constant input; gradients never flow into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    /// Differentiable leaf holding the current value of parameter `name`.
    /// Repeated calls with one name return the same node.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> NodeId {
        if let Some(&id) = self.param_nodes.get(name) {
            return id;
        }
        let value = params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
            .clone();
        let slot = self.param_names.len();
        self.param_names.push(name.to_string());
        let id = self.push(Op::Param(slot), value);
        self.param_nodes.insert(name.to_string(), id);
        id
    }

    // ---- elementwise binary ----

    fn same_shape(&self, a: NodeId, b: NodeId, op: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{op}: operand shapes differ"
        );
    }

    fn zip(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        self.same_shape(a, b, op.name());
        let (va, vb) = (self.v(a), self.v(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::raw(va.shape().to_vec(), data);
        self.push(op, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Elementwise minimum; on ties the gradient goes to `a`.
    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Minimum(a, b), |x, y| if x <= y { x } else { y })
    }

    /// Elementwise maximum; on ties the gradient goes to `a`.
    pub fn maximum(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Maximum(a, b), |x, y| if x >= y { x } else { y })
    }

    /// Adds a `[1, C]` (or `[C]`) row to every row of a `[R, C]` matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let va = self.v(a);
        let cols = va.cols();
        assert_eq!(self.v(row).numel(), cols, "add_row: row width");
        let vr = self.v(row).data();
        let mut data = va.data().to_vec();
        for chunk in data.chunks_mut(cols) {
            for (x, r) in chunk.iter_mut().zip(vr) {
                *x += r;
            }
        }
        let value = Tensor::raw(va.shape().to_vec(), data);
        self.push(Op::AddRow(a, row), value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.v(a), self.v(b));
        assert!(va.rank() == 2 && vb.rank() == 2, "matmul needs matrices");
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        assert_eq!(vb.rows(), k, "matmul: inner dimensions {:?} x {:?}", va.shape(), vb.shape());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, va.data(), (k, 1), vb.data(), (n, 1), &mut out);
        let value = Tensor::raw(vec![m, n], out);
        self.push(Op::MatMul(a, b), value)
    }

    // ---- elementwise unary ----

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let va = self.v(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::raw(va.shape().to_vec(), data);
        self.push(op, value)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> NodeId {
        self.map(a, Op::Affine(a, scale), |x| scale * x + shift)
    }

    pub fn scale(&mut self, a: NodeId, scale: f64) -> NodeId {
        self.affine(a, scale, 0.0)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.affine(a, -1.0, 0.0)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        self.affine(a, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Exp(a), f64::exp)
    }

    /// Natural log with the input clamped at [`LOG_FLOOR`].
    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Log(a), |x| x.max(LOG_FLOOR).ln())
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let va = self.v(a);
        let width = *va.shape().last().unwrap();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(width) {
            softmax_in_place(row);
        }
        let value = Tensor::raw(va.shape().to_vec(), data);
        self.push(Op::Softmax(a), value)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let va = self.v(a);
        let width = *va.shape().last().unwrap();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(width) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let value = Tensor::raw(va.shape().to_vec(), data);
        self.push(Op::LogSoftmax(a), value)
    }

    // ---- reductions and indexing ----

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.v(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let va = self.v(a);
        let s = va.data().iter().sum::<f64>() / va.numel() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s))
    }

    /// Gathers slices along axis 0 (rows of a matrix, entries of a vector).
    pub fn select_rows(&mut self, a: NodeId, rows: &[usize]) -> NodeId {
        assert!(!rows.is_empty(), "select_rows: empty index list");
        let va = self.v(a);
        let outer = va.shape()[0];
        let inner = va.numel() / outer;
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            assert!(r < outer, "select_rows: index {r} out of {outer}");
            data.extend_from_slice(&va.data()[r * inner..(r + 1) * inner]);
        }
        let mut shape = va.shape().to_vec();
        shape[0] = rows.len();
        let value = Tensor::raw(shape, data);
        self.push(Op::SelectRows(a, rows.to_vec()), value)
    }

    /// Picks individual entries by flat row-major index; the result is a vector.
    pub fn pick(&mut self, a: NodeId, flat: &[usize]) -> NodeId {
        assert!(!flat.is_empty(), "pick: empty index list");
        let va = self.v(a);
        let data = flat
            .iter()
            .map(|&i| {
                assert!(i < va.numel(), "pick: index {i} out of {}", va.numel());
                va.data()[i]
            })
            .collect::<Vec<_>>();
        let value = Tensor::raw(vec![flat.len()], data);
        self.push(Op::Pick(a, flat.to_vec()), value)
    }

    /// Picks `a[r, cols[r]]` for every row `r` of a matrix.
    pub fn pick_per_row(&mut self, a: NodeId, cols: &[usize]) -> NodeId {
        let width = self.v(a).cols();
        assert_eq!(cols.len(), self.v(a).rows(), "pick_per_row: one column per row");
        let flat: Vec<usize> = cols.iter().enumerate().map(|(r, &c)| r * width + c).collect();
        self.pick(a, &flat)
    }

    /// Single entry `a[r, c]` of a matrix as a one-element node.
    pub fn element(&mut self, a: NodeId, r: usize, c: usize) -> NodeId {
        let width = self.v(a).cols();
        self.pick(a, &[r * width + c])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        assert!(!parts.is_empty(), "concat: no parts");
        let first = self.v(parts[0]).shape().to_vec();
        let outer: usize = first[..axis].iter().product();
        let mut total_axis = 0;
        for &p in parts {
            let s = self.v(p).shape();
            assert_eq!(s.len(), first.len(), "concat: rank mismatch");
            for (d, (&x, &y)) in s.iter().zip(&first).enumerate() {
                assert!(d == axis || x == y, "concat: shape mismatch off axis");
            }
            total_axis += s[axis];
        }
        let mut data = Vec::with_capacity(outer * total_axis * first[axis + 1..].iter().product::<usize>());
        for o in 0..outer {
            for &p in parts {
                let vp = self.v(p);
                let chunk = vp.numel() / outer;
                data.extend_from_slice(&vp.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total_axis;
        let value = Tensor::raw(shape, data);
        self.push(Op::Concat(parts.to_vec(), axis), value)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> NodeId {
        let va = self.v(a);
        let shape = va.shape();
        assert!(start + len <= shape[axis] && len > 0, "narrow: range out of bounds");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src_chunk = shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * src_chunk + start * inner;
            data.extend_from_slice(&va.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let value = Tensor::raw(out_shape, data);
        self.push(Op::Narrow { src: a, axis, start }, value)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let va = self.v(a);
        assert_eq!(
            shape.iter().product::<usize>(),
            va.numel(),
            "reshape: element count"
        );
        let value = Tensor::raw(shape.to_vec(), va.data().to_vec());
        self.push(Op::Reshape(a), value)
    }

    // ---- composites ----

    /// `Σ weights ⊙ a` with constant weights.
    pub fn weighted_sum(&mut self, a: NodeId, weights: Tensor) -> NodeId {
        let w = self.constant(weights);
        let prod = self.mul(a, w);
        self.sum(prod)
    }

    /// Returns the first non-finite node, if any.
    pub fn first_non_finite(&self) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| !n.value.is_finite())
            .map(NodeId)
    }

    /// Reverse sweep from a one-element `loss` node.
    ///
    /// Returns a gradient for every entry of `params` (zero for parameters the
    /// loss does not touch). Node values are left unchanged.
    pub fn backward(&self, loss: NodeId, params: &ParamSet) -> Result<Grads> {
        if self.v(loss).numel() != 1 {
            return contract(format!(
                "backward needs a scalar loss, node {} has shape {:?}",
                loss.0,
                self.shape(loss)
            ));
        }
        for (i, n) in self.nodes[..=loss.0].iter().enumerate() {
            if !n.value.is_finite() {
                return Err(Error::Numeric {
                    node: i,
                    op: n.op.name(),
                    detail: "non-finite forward value".into(),
                });
            }
        }

        let slots: Vec<usize> = self
            .param_names
            .iter()
            .map(|n| {
                params
                    .index_of(n)
                    .ok_or_else(|| Error::Contract(format!("graph parameter {n:?} missing from parameter set")))
            })
            .collect::<Result<_>>()?;
        let mut grads = Grads::zeros_like(params);

        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(dy) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if !dy.is_finite() {
                return Err(Error::Numeric {
                    node: i,
                    op: node.op.name(),
                    detail: "non-finite adjoint".into(),
                });
            }
            self.propagate(i, &node.op, dy, &mut adj, &mut grads, &slots, params)?;
        }
        Ok(grads)
    }

    #[allow(clippy::too_many_arguments)]
    fn propagate(
        &self,
        i: usize,
        op: &Op,
        dy: Tensor,
        adj: &mut [Option<Tensor>],
        grads: &mut Grads,
        slots: &[usize],
        params: &ParamSet,
    ) -> Result<()> {
        let y = &self.nodes[i].value;
        match op {
            Op::Leaf => {}
            Op::Param(slot) => {
                let g = grads.get_index_mut(slots[*slot]);
                if g.shape() != dy.shape() {
                    let name = params.names().nth(slots[*slot]).unwrap_or("?");
                    return contract(format!(
                        "parameter {name} has shape {:?} but graph value {:?}",
                        g.shape(),
                        dy.shape()
                    ));
                }
                g.add_assign(&dy);
            }
            Op::Add(a, b) => {
                self.acc_zip(adj, *a, &dy, |d, _| d);
                self.acc_zip(adj, *b, &dy, |d, _| d);
            }
            Op::Sub(a, b) => {
                self.acc_zip(adj, *a, &dy, |d, _| d);
                self.acc_zip(adj, *b, &dy, |d, _| -d);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.v(*a).data(), self.v(*b).data());
                self.acc_idx(adj, *a, &dy, |k, d| d * vb[k]);
                self.acc_idx(adj, *b, &dy, |k, d| d * va[k]);
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.v(*a).data(), self.v(*b).data());
                self.acc_idx(adj, *a, &dy, |k, d| d / vb[k]);
                self.acc_idx(adj, *b, &dy, |k, d| -d * va[k] / (vb[k] * vb[k]));
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (self.v(*a).data(), self.v(*b).data());
                self.acc_idx(adj, *a, &dy, |k, d| if va[k] <= vb[k] { d } else { 0.0 });
                self.acc_idx(adj, *b, &dy, |k, d| if va[k] <= vb[k] { 0.0 } else { d });
            }
            Op::Maximum(a, b) => {
                let (va, vb) = (self.v(*a).data(), self.v(*b).data());
                self.acc_idx(adj, *a, &dy, |k, d| if va[k] >= vb[k] { d } else { 0.0 });
                self.acc_idx(adj, *b, &dy, |k, d| if va[k] >= vb[k] { 0.0 } else { d });
            }
            Op::AddRow(a, row) => {
                self.acc_zip(adj, *a, &dy, |d, _| d);
                if self.requires_grad(*row) {
                    let cols = dy.cols();
                    let mut sums = vec![0.0; cols];
                    for r in dy.data().chunks(cols) {
                        for (s, d) in sums.iter_mut().zip(r) {
                            *s += d;
                        }
                    }
                    let shape = self.shape(*row).to_vec();
                    accumulate(adj, row.0, Tensor::raw(shape, sums));
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.v(*a), self.v(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.requires_grad(*a) {
                    // dA = dY · Bᵀ
                    let slot = slot_mut(adj, a.0, va.shape());
                    gemm_acc(m, n, k, dy.data(), (n, 1), vb.data(), (1, n), slot.data_mut());
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ · dY
                    let slot = slot_mut(adj, b.0, vb.shape());
                    gemm_acc(k, m, n, va.data(), (1, k), dy.data(), (n, 1), slot.data_mut());
                }
            }
            Op::Affine(a, s) => {
                let s = *s;
                self.acc_zip(adj, *a, &dy, |d, _| s * d);
            }
            Op::Sigmoid(a) => {
                let yv = y.data();
                self.acc_idx(adj, *a, &dy, |k, d| d * yv[k] * (1.0 - yv[k]));
            }
            Op::Tanh(a) => {
                let yv = y.data();
                self.acc_idx(adj, *a, &dy, |k, d| d * (1.0 - yv[k] * yv[k]));
            }
            Op::Exp(a) => {
                let yv = y.data();
                self.acc_idx(adj, *a, &dy, |k, d| d * yv[k]);
            }
            Op::Log(a) => {
                let xv = self.v(*a).data();
                self.acc_idx(adj, *a, &dy, |k, d| {
                    if xv[k] > LOG_FLOOR {
                        d / xv[k]
                    } else {
                        0.0
                    }
                });
            }
            Op::Softmax(a) => {
                if self.requires_grad(*a) {
                    let width = *y.shape().last().unwrap();
                    let mut dx = vec![0.0; y.numel()];
                    for ((out, yr), dr) in dx
                        .chunks_mut(width)
                        .zip(y.data().chunks(width))
                        .zip(dy.data().chunks(width))
                    {
                        let s: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                        for ((o, p), d) in out.iter_mut().zip(yr).zip(dr) {
                            *o = p * (d - s);
                        }
                    }
                    accumulate(adj, a.0, Tensor::raw(y.shape().to_vec(), dx));
                }
            }
            Op::LogSoftmax(a) => {
                if self.requires_grad(*a) {
                    let width = *y.shape().last().unwrap();
                    let mut dx = vec![0.0; y.numel()];
                    for ((out, yr), dr) in dx
                        .chunks_mut(width)
                        .zip(y.data().chunks(width))
                        .zip(dy.data().chunks(width))
                    {
                        let s: f64 = dr.iter().sum();
                        for ((o, ly), d) in out.iter_mut().zip(yr).zip(dr) {
                            *o = d - ly.exp() * s;
                        }
                    }
                    accumulate(adj, a.0, Tensor::raw(y.shape().to_vec(), dx));
                }
            }
            Op::Sum(a) => {
                let d = dy.item();
                self.acc_zip(adj, *a, &Tensor::full(self.shape(*a), d), |d, _| d);
            }
            Op::Mean(a) => {
                let n = self.v(*a).numel() as f64;
                let d = dy.item() / n;
                self.acc_zip(adj, *a, &Tensor::full(self.shape(*a), d), |d, _| d);
            }
            Op::SelectRows(a, rows) => {
                if self.requires_grad(*a) {
                    let va = self.v(*a);
                    let inner = va.numel() / va.shape()[0];
                    let slot = slot_mut(adj, a.0, va.shape()).data_mut();
                    for (j, &r) in rows.iter().enumerate() {
                        let src = &dy.data()[j * inner..(j + 1) * inner];
                        for (s, d) in slot[r * inner..(r + 1) * inner].iter_mut().zip(src) {
                            *s += d;
                        }
                    }
                }
            }
            Op::Pick(a, flat) => {
                if self.requires_grad(*a) {
                    let slot = slot_mut(adj, a.0, self.shape(*a)).data_mut();
                    for (j, &f) in flat.iter().enumerate() {
                        slot[f] += dy.data()[j];
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let outer: usize = y.shape()[..*axis].iter().product();
                let out_chunk = y.numel() / outer;
                let mut offset = 0;
                for p in parts {
                    let vp = self.v(*p);
                    let chunk = vp.numel() / outer;
                    if self.requires_grad(*p) {
                        let slot = slot_mut(adj, p.0, vp.shape()).data_mut();
                        for o in 0..outer {
                            let src = &dy.data()[o * out_chunk + offset..o * out_chunk + offset + chunk];
                            for (s, d) in slot[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *s += d;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Narrow { src, axis, start } => {
                if self.requires_grad(*src) {
                    let vs = self.v(*src);
                    let shape = vs.shape();
                    let len = y.shape()[*axis];
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let src_chunk = shape[*axis] * inner;
                    let slot = slot_mut(adj, src.0, shape).data_mut();
                    for o in 0..outer {
                        let base = o * src_chunk + start * inner;
                        let d = &dy.data()[o * len * inner..(o + 1) * len * inner];
                        for (s, v) in slot[base..base + len * inner].iter_mut().zip(d) {
                            *s += v;
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if self.requires_grad(*a) {
                    let shape = self.shape(*a).to_vec();
                    accumulate(adj, a.0, Tensor::raw(shape, dy.into_data()));
                }
            }
        }
        Ok(())
    }

    fn acc_zip(&self, adj: &mut [Option<Tensor>], target: NodeId, dy: &Tensor, f: impl Fn(f64, usize) -> f64) {
        if !self.requires_grad(target) {
            return;
        }
        let slot = slot_mut(adj, target.0, self.shape(target)).data_mut();
        for (k, (s, &d)) in slot.iter_mut().zip(dy.data()).enumerate() {
            *s += f(d, k);
        }
    }

    fn acc_idx(&self, adj: &mut [Option<Tensor>], target: NodeId, dy: &Tensor, f: impl Fn(usize, f64) -> f64) {
        self.acc_zip(adj, target, dy, |d, k| f(k, d));
    }
}

fn slot_mut<'a>(adj: &'a mut [Option<Tensor>], i: usize, shape: &[usize]) -> &'a mut Tensor {
    adj[i].get_or_insert_with(|| Tensor::zeros(shape))
}

fn accumulate(adj: &mut [Option<Tensor>], i: usize, t: Tensor) {
    match &mut adj[i] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// `c = a · b` for row-major buffers with explicit (row, col) strides on the inputs.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    gemm_beta(m, k, n, a, sa, b, sb, c, 0.0);
}

/// `c += a · b`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    gemm_beta(m, k, n, a, sa, b, sb, c, 1.0);
}

#[allow(clippy::too_many_arguments)]
fn gemm_beta(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches given
    // the dense row/column strides passed by the callers in this module.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_with(name: &str, t: Tensor) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, t).unwrap();
        p
    }

    #[test]
    fn sum_gradient_is_ones() {
        let params = params_with("p", Tensor::vector(vec![0.3, -1.0, 2.0]));
        let mut g = Graph::new();
        let p = g.param(&params, "p");
        let loss = g.sum(p);
        let grads = g.backward(loss, &params).unwrap();
        assert_eq!(grads.get("p").unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        let params = params_with("p", Tensor::vector(vec![1.0, 2.0, 3.0]));
        let mut g = Graph::new();
        let p = g.param(&params, "p");
        let sq = g.mul(p, p);
        let loss = g.sum(sq);
        let grads = g.backward(loss, &params).unwrap();
        assert_eq!(grads.get("p").unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let params = params_with("p", Tensor::vector(vec![1.0, 2.0]));
        let mut g = Graph::new();
        let p = g.param(&params, "p");
        assert!(matches!(g.backward(p, &params), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_reports_node() {
        let params = params_with("p", Tensor::vector(vec![-1.0]));
        let mut g = Graph::new();
        let p = g.param(&params, "p");
        let zero = g.scalar(0.0);
        let q = g.div(p, zero);
        let z = g.sub(q, q);
        let loss = g.sum(z);
        match g.backward(loss, &params) {
            Err(Error::Numeric { node, op, .. }) => {
                assert_eq!(node, q.index());
                assert_eq!(op, "div");
            }
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn backward_leaves_values_untouched_and_is_repeatable() {
        let params = params_with("p", Tensor::matrix(2, 2, vec![0.1, 0.2, -0.3, 0.4]));
        let mut g = Graph::new();
        let p = g.param(&params, "p");
        let t = g.tanh(p);
        let loss = g.sum(t);
        let before = g.value(t).clone();
        let g1 = g.backward(loss, &params).unwrap();
        let g2 = g.backward(loss, &params).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g.value(t), &before);
    }

    #[test]
    fn softmax_nll_gradient_is_p_minus_onehot() {
        let logits = vec![0.3, -1.2, 2.0, 0.5];
        let params = params_with("z", Tensor::matrix(1, 4, logits.clone()));
        let mut g = Graph::new();
        let z = g.param(&params, "z");
        let p = g.softmax(z);
        let lp = g.log(p);
        let picked = g.element(lp, 0, 2);
        let loss = g.neg(picked);
        let grads = g.backward(loss, &params).unwrap();
        let mut probs = logits;
        softmax_in_place(&mut probs);
        for (k, (&gk, &pk)) in grads.get("z").unwrap().data().iter().zip(&probs).enumerate() {
            let expect = pk - if k == 2 { 1.0 } else { 0.0 };
            assert!((gk - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn min_max_ties_route_to_first_argument() {
        let mut params = ParamSet::new();
        params.insert("a", Tensor::scalar(0.5)).unwrap();
        params.insert("b", Tensor::scalar(0.5)).unwrap();
        let mut g = Graph::new();
        let a = g.param(&params, "a");
        let b = g.param(&params, "b");
        let lo = g.minimum(a, b);
        let hi = g.maximum(b, a);
        let s = g.add(lo, hi);
        let grads = g.backward(s, &params).unwrap();
        assert_eq!(grads.get("a").unwrap().item(), 1.0);
        assert_eq!(grads.get("b").unwrap().item(), 1.0);
    }

    #[test]
    fn untouched_parameters_get_zero_gradient() {
        let mut params = ParamSet::new();
        params.insert("used", Tensor::scalar(1.0)).unwrap();
        params.insert("unused", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut g = Graph::new();
        let u = g.param(&params, "used");
        let loss = g.scale(u, 3.0);
        let grads = g.backward(loss, &params).unwrap();
        assert_eq!(grads.get("unused").unwrap().data(), &[0.0, 0.0]);
        assert_eq!(grads.get("used").unwrap().item(), 3.0);
    }
}
