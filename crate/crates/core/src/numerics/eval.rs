use std::collections::BTreeMap;
use std::sync::Arc;

use super::kernels::{self, ensure_finite};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::{CustomOp, Ops};
use crate::error::{Error, Result};

/// Element counts of every buffer materialized during a forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BufferStats {
    pub total_elems: usize,
    pub largest_elems: usize,
    pub buffers: usize,
    pub by_scope: BTreeMap<String, usize>,
}

/// Forward-only backend. Intermediate values are dropped as soon as the
/// caller releases them; when tracking is on, every op output and every
/// constant is counted as if retained for the whole pass.
#[derive(Default)]
pub struct Eval {
    stats: Option<BufferStats>,
    scope: String,
}

impl Eval {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tracking() -> Self {
        Self {
            stats: Some(BufferStats::default()),
            scope: String::new(),
        }
    }

    pub fn stats(&self) -> Option<&BufferStats> {
        self.stats.as_ref()
    }

    pub fn into_stats(self) -> Option<BufferStats> {
        self.stats
    }

    fn record(&mut self, t: &Tensor) {
        if let Some(s) = &mut self.stats {
            let n = t.numel();
            s.total_elems += n;
            s.largest_elems = s.largest_elems.max(n);
            s.buffers += 1;
            *s.by_scope.entry(self.scope.clone()).or_default() += n;
        }
    }

    fn out(&mut self, op: &'static str, t: Tensor) -> Result<Tensor> {
        ensure_finite(op, &t)?;
        self.record(&t);
        Ok(t)
    }
}

impl Ops for Eval {
    type Var = Tensor;

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Tensor {
        store.get(id).clone()
    }

    fn constant(&mut self, t: Tensor) -> Tensor {
        self.record(&t);
        t
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.out("matmul", kernels::matmul(a, b)?)
    }

    fn transpose(&mut self, a: &Tensor) -> Result<Tensor> {
        self.out("transpose", kernels::transpose(a)?)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.out("add", kernels::binary("add", a, b, |x, y| x + y)?)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.out("mul", kernels::binary("mul", a, b, |x, y| x * y)?)
    }

    fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.out("scale", kernels::map(a, |x| x * c))
    }

    fn concat(&mut self, xs: &[Tensor], axis: usize) -> Result<Tensor> {
        let refs: Vec<&Tensor> = xs.iter().collect();
        self.out("concat", kernels::concat(&refs, axis)?)
    }

    fn stack(&mut self, xs: &[Tensor], axis: usize) -> Result<Tensor> {
        let refs: Vec<&Tensor> = xs.iter().collect();
        self.out("stack", kernels::stack(&refs, axis)?)
    }

    fn slice(&mut self, a: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.out("slice", kernels::slice(a, axis, start, len)?)
    }

    fn reshape(&mut self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != a.numel() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                lhs: a.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        self.out("reshape", Tensor::with_shape(shape.to_vec(), a.data().to_vec()))
    }

    fn tanh(&mut self, a: &Tensor) -> Result<Tensor> {
        self.out("tanh", kernels::map(a, f64::tanh))
    }

    fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        self.out("relu", kernels::map(a, |x| x.max(0.0)))
    }

    fn gelu(&mut self, a: &Tensor) -> Result<Tensor> {
        self.out("gelu", kernels::map(a, kernels::gelu))
    }

    fn softmax(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        self.out("softmax", kernels::softmax(a, axis)?)
    }

    fn logsumexp(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        self.out("logsumexp", kernels::logsumexp(a, axis)?)
    }

    fn sum_axis(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        self.out("sum_axis", kernels::sum_axis(a, axis)?)
    }

    fn max_axis(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        self.out("max_axis", kernels::max_axis(a, axis)?.0)
    }

    fn sum_all(&mut self, a: &Tensor) -> Result<Tensor> {
        self.out("sum_all", Tensor::scalar(a.data().iter().sum()))
    }

    fn layer_norm(&mut self, a: &Tensor, eps: f64) -> Result<Tensor> {
        self.out("layer_norm", kernels::layer_norm(a, eps)?.0)
    }

    fn gather_rows(&mut self, table: &Tensor, ids: &[usize]) -> Result<Tensor> {
        self.out("gather_rows", kernels::gather_rows(table, ids)?)
    }

    fn custom(&mut self, inputs: &[Tensor], op: Arc<dyn CustomOp>) -> Result<Tensor> {
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let t = op.forward(&refs)?;
        self.out(op.name(), t)
    }

    fn scope(&mut self, name: &str) {
        self.scope.clear();
        self.scope.push_str(name);
    }
}
