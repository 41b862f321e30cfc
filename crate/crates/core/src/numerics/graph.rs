use std::sync::Arc;

use super::kernels::{self, ensure_finite, split_axis};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use super::{CustomOp, Ops};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Backward {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Concat(Vec<usize>, usize),
    Stack(Vec<usize>, usize),
    Slice { input: usize, axis: usize, start: usize },
    Reshape(usize),
    Tanh(usize),
    Gelu(usize),
    Relu(usize),
    Softmax(usize, usize),
    LogSumExp(usize, usize),
    SumAxis(usize, usize),
    MaxAxis { input: usize, axis: usize, arg: Vec<usize> },
    SumAll(usize),
    LayerNorm { input: usize, rstd: Vec<f64> },
    Gather { table: usize, ids: Vec<usize> },
    Custom { inputs: Vec<usize>, op: Arc<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    back: Backward,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Tape of executed ops. Backward visits nodes in exact reverse order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn push(&mut self, op: &'static str, value: Tensor, back: Backward, inputs: &[usize]) -> Result<NodeId> {
        ensure_finite(op, &value)?;
        let requires_grad = self.rg(inputs);
        self.nodes.push(Node {
            value,
            back,
            requires_grad,
            param: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Reverse-mode gradients of a scalar node for every unfrozen parameter
    /// that contributed to it.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(root.value.shape(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut acc = |idx: usize, t: Tensor| {
                if !self.nodes[idx].requires_grad {
                    return;
                }
                match &mut grads[idx] {
                    Some(prev) => {
                        for (a, b) in prev.data_mut().iter_mut().zip(t.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(t),
                }
            };
            let val = |idx: usize| &self.nodes[idx].value;
            match &node.back {
                Backward::Leaf => {
                    if let Some(p) = node.param {
                        out.insert(p, g);
                    }
                }
                Backward::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if self.nodes[*a].requires_grad {
                        let mut da = vec![0.0; m * k];
                        kernels::gemm(m, n, k, g.data(), false, bv.data(), true, 0.0, &mut da);
                        acc(*a, Tensor::with_shape(vec![m, k], da));
                    }
                    if self.nodes[*b].requires_grad {
                        let mut db = vec![0.0; k * n];
                        kernels::gemm(k, m, n, av.data(), true, g.data(), false, 0.0, &mut db);
                        acc(*b, Tensor::with_shape(vec![k, n], db));
                    }
                }
                Backward::Transpose(a) => acc(*a, kernels::transpose(&g)?),
                Backward::Add(a, b) => {
                    acc(*a, kernels::unbroadcast(&g, val(*a).shape()));
                    acc(*b, kernels::unbroadcast(&g, val(*b).shape()));
                }
                Backward::Mul(a, b) => {
                    if self.nodes[*a].requires_grad {
                        let ga = kernels::binary("mul", &g, val(*b), |x, y| x * y)?;
                        acc(*a, kernels::unbroadcast(&ga, val(*a).shape()));
                    }
                    if self.nodes[*b].requires_grad {
                        let gb = kernels::binary("mul", &g, val(*a), |x, y| x * y)?;
                        acc(*b, kernels::unbroadcast(&gb, val(*b).shape()));
                    }
                }
                Backward::Scale(a, c) => acc(*a, kernels::map(&g, |x| x * c)),
                Backward::Concat(inputs, axis) => {
                    let mut start = 0;
                    for &x in inputs {
                        let len = val(x).shape()[*axis];
                        acc(x, kernels::slice(&g, *axis, start, len)?);
                        start += len;
                    }
                }
                Backward::Stack(inputs, axis) => {
                    for (k, &x) in inputs.iter().enumerate() {
                        let part = kernels::slice(&g, *axis, k, 1)?;
                        acc(x, part.reshaped(val(x).shape().to_vec()));
                    }
                }
                Backward::Slice { input, axis, start } => {
                    let shape = val(*input).shape();
                    let (outer, alen, inner) = split_axis(shape, *axis);
                    let len = g.shape()[*axis];
                    let mut d = vec![0.0; val(*input).numel()];
                    for o in 0..outer {
                        let dst = o * alen * inner + start * inner;
                        let src = o * len * inner;
                        d[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                    }
                    acc(*input, Tensor::with_shape(shape.to_vec(), d));
                }
                Backward::Reshape(a) => acc(*a, g.reshaped(val(*a).shape().to_vec())),
                Backward::Tanh(a) => {
                    let y = &node.value;
                    let d = g.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                    acc(*a, Tensor::with_shape(y.shape().to_vec(), d));
                }
                Backward::Relu(a) => {
                    let x = val(*a);
                    let d = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc(*a, Tensor::with_shape(x.shape().to_vec(), d));
                }
                Backward::Gelu(a) => {
                    let x = val(*a);
                    let d = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(g, &x)| g * kernels::gelu_grad(x))
                        .collect();
                    acc(*a, Tensor::with_shape(x.shape().to_vec(), d));
                }
                Backward::Softmax(a, axis) => acc(*a, softmax_backward(&node.value, &g, *axis)),
                Backward::LogSumExp(a, axis) => {
                    let p = kernels::softmax(val(*a), *axis)?;
                    acc(*a, expand_mul(&g, &p, *axis));
                }
                Backward::SumAxis(a, axis) => {
                    let ones = Tensor::filled(val(*a).shape(), 1.0);
                    acc(*a, expand_mul(&g, &ones, *axis));
                }
                Backward::MaxAxis { input, axis, arg } => {
                    let shape = val(*input).shape();
                    let (outer, len, inner) = split_axis(shape, *axis);
                    let mut d = vec![0.0; val(*input).numel()];
                    for o in 0..outer {
                        for i in 0..inner {
                            d[o * len * inner + arg[o * inner + i] * inner + i] = g.data()[o * inner + i];
                        }
                    }
                    acc(*input, Tensor::with_shape(shape.to_vec(), d));
                }
                Backward::SumAll(a) => acc(*a, Tensor::filled(val(*a).shape(), g.item())),
                Backward::LayerNorm { input, rstd } => {
                    let y = &node.value;
                    let dim = *y.shape().last().expect("shape");
                    let mut d = vec![0.0; y.numel()];
                    for (r, s) in rstd.iter().enumerate() {
                        let ys = &y.data()[r * dim..(r + 1) * dim];
                        let gs = &g.data()[r * dim..(r + 1) * dim];
                        let mg = gs.iter().sum::<f64>() / dim as f64;
                        let mgy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / dim as f64;
                        for c in 0..dim {
                            d[r * dim + c] = s * (gs[c] - mg - ys[c] * mgy);
                        }
                    }
                    acc(*input, Tensor::with_shape(y.shape().to_vec(), d));
                }
                Backward::Gather { table, ids } => {
                    let tv = val(*table);
                    let width = tv.numel() / tv.shape()[0];
                    let mut d = vec![0.0; tv.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..width {
                            d[id * width + c] += g.data()[r * width + c];
                        }
                    }
                    acc(*table, Tensor::with_shape(tv.shape().to_vec(), d));
                }
                Backward::Custom { inputs, op } => {
                    let ins: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
                    for (&i, d) in inputs.iter().zip(op.backward(&ins, &node.value, &g)) {
                        acc(i, d);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = split_axis(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut d = vec![0.0; y.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let dot: f64 = (0..len).map(|k| yd[at(k)] * gd[at(k)]).sum();
            for k in 0..len {
                d[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
            }
        }
    }
    Tensor::with_shape(y.shape().to_vec(), d)
}

/// Broadcasts reduced `g` back along `axis` and multiplies by `w` (full shape).
fn expand_mul(g: &Tensor, w: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = split_axis(w.shape(), axis);
    let mut d = vec![0.0; w.numel()];
    for o in 0..outer {
        for k in 0..len {
            for i in 0..inner {
                let at = o * len * inner + k * inner + i;
                d[at] = g.data()[o * inner + i] * w.data()[at];
            }
        }
    }
    Tensor::with_shape(w.shape().to_vec(), d)
}

impl Ops for Graph {
    type Var = NodeId;

    fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            value: store.get(id).clone(),
            back: Backward::Leaf,
            requires_grad: !store.is_frozen(id),
            param: Some(id),
        });
        NodeId(self.nodes.len() - 1)
    }

    fn constant(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node {
            value: t,
            back: Backward::Leaf,
            requires_grad: false,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Tensor {
        &self.nodes[v.0].value
    }

    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let t = kernels::matmul(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        self.push("matmul", t, Backward::MatMul(a.0, b.0), &[a.0, b.0])
    }

    fn transpose(&mut self, a: &NodeId) -> Result<NodeId> {
        let t = kernels::transpose(&self.nodes[a.0].value)?;
        self.push("transpose", t, Backward::Transpose(a.0), &[a.0])
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let t = kernels::binary("add", &self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y)?;
        self.push("add", t, Backward::Add(a.0, b.0), &[a.0, b.0])
    }

    fn mul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let t = kernels::binary("mul", &self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y)?;
        self.push("mul", t, Backward::Mul(a.0, b.0), &[a.0, b.0])
    }

    fn scale(&mut self, a: &NodeId, c: f64) -> Result<NodeId> {
        let t = kernels::map(&self.nodes[a.0].value, |x| x * c);
        self.push("scale", t, Backward::Scale(a.0, c), &[a.0])
    }

    fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let refs: Vec<&Tensor> = xs.iter().map(|x| &self.nodes[x.0].value).collect();
        let t = kernels::concat(&refs, axis)?;
        let ids: Vec<usize> = xs.iter().map(|x| x.0).collect();
        self.push("concat", t, Backward::Concat(ids.clone(), axis), &ids)
    }

    fn stack(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let refs: Vec<&Tensor> = xs.iter().map(|x| &self.nodes[x.0].value).collect();
        let t = kernels::stack(&refs, axis)?;
        let ids: Vec<usize> = xs.iter().map(|x| x.0).collect();
        self.push("stack", t, Backward::Stack(ids.clone(), axis), &ids)
    }

    fn slice(&mut self, a: &NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let t = kernels::slice(&self.nodes[a.0].value, axis, start, len)?;
        self.push("slice", t, Backward::Slice { input: a.0, axis, start }, &[a.0])
    }

    fn reshape(&mut self, a: &NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if shape.iter().product::<usize>() != v.numel() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                lhs: v.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        // materialized copy, so every op output is an individually owned buffer
        let t = Tensor::with_shape(shape.to_vec(), v.data().to_vec());
        self.push("reshape", t, Backward::Reshape(a.0), &[a.0])
    }

    fn tanh(&mut self, a: &NodeId) -> Result<NodeId> {
        let t = kernels::map(&self.nodes[a.0].value, f64::tanh);
        self.push("tanh", t, Backward::Tanh(a.0), &[a.0])
    }

    fn relu(&mut self, a: &NodeId) -> Result<NodeId> {
        let t = kernels::map(&self.nodes[a.0].value, |x| x.max(0.0));
        self.push("relu", t, Backward::Relu(a.0), &[a.0])
    }

    fn gelu(&mut self, a: &NodeId) -> Result<NodeId> {
        let t = kernels::map(&self.nodes[a.0].value, kernels::gelu);
        self.push("gelu", t, Backward::Gelu(a.0), &[a.0])
    }

    fn softmax(&mut self, a: &NodeId, axis: usize) -> Result<NodeId> {
        let t = kernels::softmax(&self.nodes[a.0].value, axis)?;
        self.push("softmax", t, Backward::Softmax(a.0, axis), &[a.0])
    }

    fn logsumexp(&mut self, a: &NodeId, axis: usize) -> Result<NodeId> {
        let t = kernels::logsumexp(&self.nodes[a.0].value, axis)?;
        self.push("logsumexp", t, Backward::LogSumExp(a.0, axis), &[a.0])
    }

    fn sum_axis(&mut self, a: &NodeId, axis: usize) -> Result<NodeId> {
        let t = kernels::sum_axis(&self.nodes[a.0].value, axis)?;
        self.push("sum_axis", t, Backward::SumAxis(a.0, axis), &[a.0])
    }

    fn max_axis(&mut self, a: &NodeId, axis: usize) -> Result<NodeId> {
        let (t, arg) = kernels::max_axis(&self.nodes[a.0].value, axis)?;
        self.push("max_axis", t, Backward::MaxAxis { input: a.0, axis, arg }, &[a.0])
    }

    fn sum_all(&mut self, a: &NodeId) -> Result<NodeId> {
        let t = Tensor::scalar(self.nodes[a.0].value.data().iter().sum());
        self.push("sum_all", t, Backward::SumAll(a.0), &[a.0])
    }

    fn layer_norm(&mut self, a: &NodeId, eps: f64) -> Result<NodeId> {
        let (t, rstd) = kernels::layer_norm(&self.nodes[a.0].value, eps)?;
        self.push("layer_norm", t, Backward::LayerNorm { input: a.0, rstd }, &[a.0])
    }

    fn gather_rows(&mut self, table: &NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = kernels::gather_rows(&self.nodes[table.0].value, ids)?;
        self.push(
            "gather_rows",
            t,
            Backward::Gather {
                table: table.0,
                ids: ids.to_vec(),
            },
            &[table.0],
        )
    }

    fn custom(&mut self, inputs: &[NodeId], op: Arc<dyn CustomOp>) -> Result<NodeId> {
        let refs: Vec<&Tensor> = inputs.iter().map(|x| &self.nodes[x.0].value).collect();
        let t = op.forward(&refs)?;
        let ids: Vec<usize> = inputs.iter().map(|x| x.0).collect();
        let name = op.name();
        self.push(name, t, Backward::Custom { inputs: ids.clone(), op }, &ids)
    }
}
