//! Dense tensor compute with reverse-mode differentiation.
//!
//! Model code is written once against the [`Ops`] trait and runs on two
//! backends: [`Graph`] records every op for [`Graph::backward`], and
//! [`Eval`] computes values only, optionally accounting every materialized
//! buffer for memory measurement. Both share the kernels in [`kernels`].

mod eval;
mod gradcheck;
mod graph;
pub mod kernels;
mod params;
pub mod rng;
mod tensor;

use std::sync::Arc;

pub use eval::{BufferStats, Eval};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use params::{sgd_step, Gradients, ParamEntry, ParamId, ParamStore};
pub use tensor::Tensor;

use crate::error::Result;

/// Value substituted for masked attention logits; `exp` of it underflows to 0.
pub const MASK_NEG: f64 = -1e9;

/// An op with a hand-written backward rule.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Vector-Jacobian products, one per input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

pub trait Ops {
    type Var: Clone;

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Self::Var;
    fn constant(&mut self, t: Tensor) -> Self::Var;
    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor;

    fn shape(&self, v: &Self::Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn transpose(&mut self, a: &Self::Var) -> Result<Self::Var>;
    /// Elementwise sum with broadcasting.
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    /// Elementwise product with broadcasting.
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn scale(&mut self, a: &Self::Var, c: f64) -> Result<Self::Var>;
    fn concat(&mut self, xs: &[Self::Var], axis: usize) -> Result<Self::Var>;
    fn stack(&mut self, xs: &[Self::Var], axis: usize) -> Result<Self::Var>;
    fn slice(&mut self, a: &Self::Var, axis: usize, start: usize, len: usize) -> Result<Self::Var>;
    fn reshape(&mut self, a: &Self::Var, shape: &[usize]) -> Result<Self::Var>;
    fn tanh(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn gelu(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn relu(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn softmax(&mut self, a: &Self::Var, axis: usize) -> Result<Self::Var>;
    fn logsumexp(&mut self, a: &Self::Var, axis: usize) -> Result<Self::Var>;
    fn sum_axis(&mut self, a: &Self::Var, axis: usize) -> Result<Self::Var>;
    fn max_axis(&mut self, a: &Self::Var, axis: usize) -> Result<Self::Var>;
    fn sum_all(&mut self, a: &Self::Var) -> Result<Self::Var>;
    /// Normalization over the last axis, without affine parameters.
    fn layer_norm(&mut self, a: &Self::Var, eps: f64) -> Result<Self::Var>;
    /// Row lookup (embedding gather) on the first axis.
    fn gather_rows(&mut self, table: &Self::Var, ids: &[usize]) -> Result<Self::Var>;
    fn custom(&mut self, inputs: &[Self::Var], op: Arc<dyn CustomOp>) -> Result<Self::Var>;

    /// Labels buffers created from here on, for memory breakdowns.
    fn scope(&mut self, _name: &str) {}

    /// Single-head attention `softmax(q kᵀ / sqrt(d_k) + mask) v`.
    ///
    /// `mask` is an additive `[1, n_keys]` bias (0 or [`MASK_NEG`]).
    fn scaled_dot_attention(
        &mut self,
        q: &Self::Var,
        k: &Self::Var,
        v: &Self::Var,
        mask: Option<&Self::Var>,
    ) -> Result<Self::Var> {
        let dk = self.shape(q)[1];
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, &kt)?;
        let mut scores = self.scale(&scores, 1.0 / (dk as f64).sqrt())?;
        if let Some(m) = mask {
            scores = self.add(&scores, m)?;
        }
        let probs = self.softmax(&scores, 1)?;
        self.matmul(&probs, v)
    }

    /// `x W + b` for a `[n, in]` input.
    fn linear(&mut self, x: &Self::Var, w: &Self::Var, b: Option<&Self::Var>) -> Result<Self::Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(&y, b),
            None => Ok(y),
        }
    }
}
