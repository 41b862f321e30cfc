//! Pre-norm transformer encoder with sinusoidal positions.

use crate::error::{Error, Result};
use crate::numerics::{rng, Ops, ParamId, ParamStore, Tensor, MASK_NEG};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Debug)]
struct Dense {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Clone, Debug)]
struct Block {
    ln1: Norm,
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    ln2: Norm,
    ff1: Dense,
    ff2: Dense,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    d_in: usize,
    hidden: usize,
    heads: usize,
    max_len: usize,
    input: Dense,
    blocks: Vec<Block>,
    final_norm: Norm,
}

pub struct EncoderShape {
    pub d_in: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub max_len: usize,
}

struct Init<'a> {
    params: &'a mut ParamStore,
    prefix: &'a str,
    seed: u64,
}

impl Init<'_> {
    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Dense {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w_name = format!("{}.{name}.w", self.prefix);
        let b_name = format!("{}.{name}.b", self.prefix);
        let w = rng::uniform(&[fan_in, fan_out], bound, self.seed, rng::stream_id(&w_name));
        Dense {
            w: self.params.add(w_name, w, false, Some(self.seed)),
            b: Some(self.params.add(b_name, Tensor::zeros(&[fan_out]), false, Some(self.seed))),
        }
    }

    fn dense_no_bias(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Dense {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w_name = format!("{}.{name}.w", self.prefix);
        let w = rng::uniform(&[fan_in, fan_out], bound, self.seed, rng::stream_id(&w_name));
        Dense {
            w: self.params.add(w_name, w, false, Some(self.seed)),
            b: None,
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            gamma: self.params.add(format!("{}.{name}.gamma", self.prefix), Tensor::filled(&[dim], 1.0), false, None),
            beta: self.params.add(format!("{}.{name}.beta", self.prefix), Tensor::zeros(&[dim]), false, None),
        }
    }
}

/// `[n, dim]` sinusoidal position table.
pub fn positions(n: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; n * dim];
    for pos in 0..n {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 / rate;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![n, dim], data).expect("n, dim > 0")
}

impl Encoder {
    pub fn new(params: &mut ParamStore, prefix: &str, shape: &EncoderShape, seed: u64) -> Result<Self> {
        let EncoderShape {
            d_in,
            hidden,
            heads,
            layers,
            ff_dim,
            max_len,
        } = *shape;
        if d_in == 0 || hidden == 0 || heads == 0 || ff_dim == 0 || max_len == 0 {
            return Err(Error::invalid("encoder sizes must be positive"));
        }
        if hidden % heads != 0 {
            return Err(Error::invalid(format!("hidden {hidden} not divisible by {heads} heads")));
        }
        let mut init = Init { params, prefix, seed };
        let input = init.dense("input", d_in, hidden);
        let blocks = (0..layers)
            .map(|l| Block {
                ln1: init.norm(&format!("l{l}.ln1"), hidden),
                q: init.dense(&format!("l{l}.q"), hidden, hidden),
                // A key bias shifts every logit of a query row equally, which
                // softmax cancels, so it would never receive gradient.
                k: init.dense_no_bias(&format!("l{l}.k"), hidden, hidden),
                v: init.dense(&format!("l{l}.v"), hidden, hidden),
                o: init.dense(&format!("l{l}.o"), hidden, hidden),
                ln2: init.norm(&format!("l{l}.ln2"), hidden),
                ff1: init.dense(&format!("l{l}.ff1"), hidden, ff_dim),
                ff2: init.dense(&format!("l{l}.ff2"), ff_dim, hidden),
            })
            .collect();
        let final_norm = init.norm("final_ln", hidden);
        Ok(Self {
            d_in,
            hidden,
            heads,
            max_len,
            input,
            blocks,
            final_norm,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn dense<O: Ops>(ops: &mut O, params: &ParamStore, d: &Dense, x: &O::Var) -> Result<O::Var> {
        let w = ops.param(params, d.w);
        let b = d.b.map(|b| ops.param(params, b));
        ops.linear(x, &w, b.as_ref())
    }

    fn norm<O: Ops>(ops: &mut O, params: &ParamStore, n: &Norm, x: &O::Var) -> Result<O::Var> {
        let y = ops.layer_norm(x, LN_EPS)?;
        let g = ops.param(params, n.gamma);
        let b = ops.param(params, n.beta);
        let y = ops.mul(&y, &g)?;
        ops.add(&y, &b)
    }

    /// Encodes `[n, d_in]` into `[n, hidden]`. `valid` marks key positions
    /// that may be attended to (all of them when `None`).
    pub fn encode<O: Ops>(&self, ops: &mut O, params: &ParamStore, x: &O::Var, valid: Option<&[bool]>) -> Result<O::Var> {
        let shape = ops.shape(x);
        if shape.len() != 2 || shape[1] != self.d_in {
            return Err(Error::Shape {
                op: "encode",
                lhs: shape,
                rhs: vec![0, self.d_in],
            });
        }
        let n = shape[0];
        if n > self.max_len {
            return Err(Error::TooLong { len: n, max: self.max_len });
        }
        let mask = match valid {
            Some(v) if v.len() != n => {
                return Err(Error::LengthMismatch(format!("{n} positions, mask of {}", v.len())))
            }
            Some(v) => {
                let bias = v.iter().map(|&ok| if ok { 0.0 } else { MASK_NEG }).collect();
                Some(ops.constant(Tensor::new(vec![1, n], bias)?))
            }
            None => None,
        };
        ops.scope("input");
        let h = Self::dense(ops, params, &self.input, x)?;
        let pos = ops.constant(positions(n, self.hidden));
        let mut h = ops.add(&h, &pos)?;
        let dh = self.hidden / self.heads;
        for (l, block) in self.blocks.iter().enumerate() {
            ops.scope(&format!("layer{l}.attention"));
            let a = Self::norm(ops, params, &block.ln1, &h)?;
            let q = Self::dense(ops, params, &block.q, &a)?;
            let k = Self::dense(ops, params, &block.k, &a)?;
            let v = Self::dense(ops, params, &block.v, &a)?;
            let mut heads = Vec::with_capacity(self.heads);
            for head in 0..self.heads {
                let qh = ops.slice(&q, 1, head * dh, dh)?;
                let kh = ops.slice(&k, 1, head * dh, dh)?;
                let vh = ops.slice(&v, 1, head * dh, dh)?;
                heads.push(ops.scaled_dot_attention(&qh, &kh, &vh, mask.as_ref())?);
            }
            let cat = if heads.len() == 1 { heads.pop().expect("one head") } else { ops.concat(&heads, 1)? };
            let o = Self::dense(ops, params, &block.o, &cat)?;
            h = ops.add(&h, &o)?;
            ops.scope(&format!("layer{l}.feedforward"));
            let f = Self::norm(ops, params, &block.ln2, &h)?;
            let f = Self::dense(ops, params, &block.ff1, &f)?;
            let f = ops.gelu(&f)?;
            let f = Self::dense(ops, params, &block.ff2, &f)?;
            h = ops.add(&h, &f)?;
        }
        ops.scope("output");
        Self::norm(ops, params, &self.final_norm, &h)
    }
}
