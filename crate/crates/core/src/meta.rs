//! Meta-embeddings: concatenation, linear and attention combiners over
//! several frozen embedding sources, a character CNN encoder, and the
//! hierarchical word + subword + character embedder.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingTable, SubwordVocab};
use crate::error::{Error, Result};
use crate::numerics::{rng, Ops, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    Concat,
    Linear,
    Attention,
}

/// Nonlinearity applied to projected vectors before attention scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    #[default]
    Tanh,
    Identity,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaOptions {
    pub mode: Combine,
    /// Shared projected width; ignored for concat.
    pub d_prime: usize,
    #[serde(default)]
    pub scorer: Scorer,
    /// One weight per source (learned scoring vector) instead of one per
    /// source and dimension.
    #[serde(default)]
    pub scalar_attention: bool,
}

impl MetaOptions {
    pub fn concat() -> Self {
        Self {
            mode: Combine::Concat,
            d_prime: 0,
            scorer: Scorer::Tanh,
            scalar_attention: false,
        }
    }

    pub fn linear(d_prime: usize) -> Self {
        Self {
            mode: Combine::Linear,
            ..Self::attention(d_prime)
        }
    }

    pub fn attention(d_prime: usize) -> Self {
        Self {
            mode: Combine::Attention,
            d_prime,
            scorer: Scorer::Tanh,
            scalar_attention: false,
        }
    }
}

/// Output of a combiner: `[n, out_dim]` embeddings plus, for attention, the
/// weights as `[sources, n, d']` (or `[sources, n, 1]` for scalar attention).
pub struct Combined<V> {
    pub output: V,
    pub alpha: Option<V>,
}

/// Per-token, per-source attention weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    weights: Tensor,
}

impl AttentionTrace {
    pub fn new(weights: Tensor) -> Self {
        assert_eq!(weights.shape().len(), 3, "attention weights are [sources, tokens, width]");
        Self { weights }
    }

    pub fn sources(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn tokens(&self) -> usize {
        self.weights.shape()[1]
    }

    /// `α_{token, source}`: one entry per projected dimension (or a single
    /// entry for scalar attention).
    pub fn weight(&self, token: usize, source: usize) -> &[f64] {
        let s = self.weights.shape();
        let w = s[2];
        let start = (source * s[1] + token) * w;
        &self.weights.data()[start..start + w]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.weights
    }
}

#[derive(Clone, Debug)]
pub struct MetaEmbedder {
    sources: Vec<Arc<EmbeddingTable>>,
    options: MetaOptions,
    projections: Vec<ParamId>,
    score_vector: Option<ParamId>,
}

impl MetaEmbedder {
    /// Registers projection parameters under `prefix`. Projections are
    /// `d_j × d'` (applied to row vectors), initialised uniform in
    /// `±1/√d_j`.
    pub fn new(
        params: &mut ParamStore,
        prefix: &str,
        sources: Vec<Arc<EmbeddingTable>>,
        options: MetaOptions,
        seed: u64,
    ) -> Result<Self> {
        let dims: Vec<usize> = sources.iter().map(|s| s.dim()).collect();
        let (projections, score_vector) = register(params, prefix, &dims, options, seed)?;
        Ok(Self {
            sources,
            options,
            projections,
            score_vector,
        })
    }

    pub fn sources(&self) -> &[Arc<EmbeddingTable>] {
        &self.sources
    }

    pub fn options(&self) -> MetaOptions {
        self.options
    }

    pub fn out_dim(&self) -> usize {
        match self.options.mode {
            Combine::Concat => self.sources.iter().map(|s| s.dim()).sum(),
            _ => self.options.d_prime,
        }
    }

    pub fn projections(&self) -> &[ParamId] {
        &self.projections
    }

    pub fn score_vector(&self) -> Option<ParamId> {
        self.score_vector
    }

    /// Frozen lookups `[n, d_j]` for each source.
    pub fn lookups<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Tensor> {
        self.sources.iter().map(|t| lookup_matrix(t, tokens)).collect()
    }

    pub fn embed<O: Ops, S: AsRef<str>>(
        &self,
        ops: &mut O,
        params: &ParamStore,
        tokens: &[S],
    ) -> Result<Combined<O::Var>> {
        let inputs: Vec<O::Var> = self.lookups(tokens).into_iter().map(|t| ops.constant(t)).collect();
        self.combine(ops, params, &inputs)
    }

    /// Combines per-source `[n, d_j]` inputs.
    pub fn combine<O: Ops>(&self, ops: &mut O, params: &ParamStore, inputs: &[O::Var]) -> Result<Combined<O::Var>> {
        combine_with(ops, params, inputs, self.options, &self.projections, self.score_vector)
    }
}

fn register(
    params: &mut ParamStore,
    prefix: &str,
    dims: &[usize],
    options: MetaOptions,
    seed: u64,
) -> Result<(Vec<ParamId>, Option<ParamId>)> {
    if dims.is_empty() {
        return Err(Error::invalid("meta-embedder needs at least one source"));
    }
    if options.mode == Combine::Concat {
        return Ok((Vec::new(), None));
    }
    if options.d_prime == 0 {
        return Err(Error::invalid("projected dimension must be positive"));
    }
    let projections = dims
        .iter()
        .enumerate()
        .map(|(j, &d)| {
            let name = format!("{prefix}.proj{j}");
            let t = rng::uniform(&[d, options.d_prime], 1.0 / (d as f64).sqrt(), seed, rng::stream_id(&name));
            params.add(name, t, false, Some(seed))
        })
        .collect();
    let score_vector = (options.mode == Combine::Attention && options.scalar_attention).then(|| {
        let name = format!("{prefix}.score");
        let d = options.d_prime;
        let t = rng::uniform(&[d, 1], 1.0 / (d as f64).sqrt(), seed, rng::stream_id(&name));
        params.add(name, t, false, Some(seed))
    });
    Ok((projections, score_vector))
}

pub fn lookup_matrix<S: AsRef<str>>(table: &EmbeddingTable, tokens: &[S]) -> Tensor {
    let d = table.dim();
    let mut data = vec![0.0; tokens.len() * d];
    for (row, tok) in data.chunks_mut(d).zip(tokens) {
        table.lookup_into(tok.as_ref(), row);
    }
    Tensor::new(vec![tokens.len(), d], data).expect("non-empty token list")
}

fn combine_with<O: Ops>(
    ops: &mut O,
    params: &ParamStore,
    inputs: &[O::Var],
    options: MetaOptions,
    projections: &[ParamId],
    score_vector: Option<ParamId>,
) -> Result<Combined<O::Var>> {
    if inputs.is_empty() {
        return Err(Error::invalid("no embedding sources"));
    }
    if options.mode == Combine::Concat {
        let output = if inputs.len() == 1 {
            inputs[0].clone()
        } else {
            ops.concat(inputs, 1)?
        };
        return Ok(Combined { output, alpha: None });
    }
    if projections.len() != inputs.len() {
        return Err(Error::invalid(format!(
            "{} inputs for {} projections",
            inputs.len(),
            projections.len()
        )));
    }
    let mut projected = Vec::with_capacity(inputs.len());
    for (x, &p) in inputs.iter().zip(projections) {
        let w = ops.param(params, p);
        projected.push(ops.matmul(x, &w)?);
    }
    if options.mode == Combine::Linear {
        let mut acc = projected[0].clone();
        for p in &projected[1..] {
            acc = ops.add(&acc, p)?;
        }
        return Ok(Combined { output: acc, alpha: None });
    }

    let mut scores = Vec::with_capacity(projected.len());
    for p in &projected {
        let s = match options.scorer {
            Scorer::Tanh => ops.tanh(p)?,
            Scorer::Relu => ops.relu(p)?,
            Scorer::Identity => p.clone(),
        };
        let s = match score_vector {
            Some(a) => {
                let a = ops.param(params, a);
                ops.matmul(&s, &a)?
            }
            None => s,
        };
        scores.push(s);
    }
    let scores = ops.stack(&scores, 0)?;
    let alpha = ops.softmax(&scores, 0)?;
    let stacked = ops.stack(&projected, 0)?;
    let weighted = ops.mul(&alpha, &stacked)?;
    let output = ops.sum_axis(&weighted, 0)?;
    Ok(Combined {
        output,
        alpha: Some(alpha),
    })
}

pub const CHAR_UNK: usize = 0;

/// Character CNN: embedding lookup, same-padded 1-D convolution, max over
/// positions.
#[derive(Clone, Debug)]
pub struct CharEncoder {
    chars: Vec<char>,
    index: HashMap<char, usize>,
    char_dim: usize,
    width: usize,
    out_dim: usize,
    table: ParamId,
    conv_w: ParamId,
    conv_b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharOptions {
    pub char_dim: usize,
    pub width: usize,
    pub out_dim: usize,
}

impl Default for CharOptions {
    fn default() -> Self {
        Self {
            char_dim: 50,
            width: 3,
            out_dim: 50,
        }
    }
}

impl CharEncoder {
    /// `chars` is the known alphabet; id 0 is reserved for unknown characters.
    pub fn new(
        params: &mut ParamStore,
        prefix: &str,
        chars: impl IntoIterator<Item = char>,
        options: CharOptions,
        seed: u64,
    ) -> Result<Self> {
        let CharOptions { char_dim, width, out_dim } = options;
        if char_dim == 0 || width == 0 || out_dim == 0 {
            return Err(Error::invalid("character encoder sizes must be positive"));
        }
        let mut list = Vec::new();
        let mut index = HashMap::new();
        for c in chars {
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry(c) {
                e.insert(list.len() + 1);
                list.push(c);
            }
        }
        let mut add = |suffix: &str, shape: &[usize], bound: f64| {
            let name = format!("{prefix}.{suffix}");
            let t = rng::uniform(shape, bound, seed, rng::stream_id(&name));
            params.add(name, t, false, Some(seed))
        };
        let table = add("table", &[list.len() + 1, char_dim], 1.0 / (char_dim as f64).sqrt());
        let fan_in = (width * char_dim) as f64;
        let conv_w = add("conv_w", &[width * char_dim, out_dim], 1.0 / fan_in.sqrt());
        let conv_b = add("conv_b", &[out_dim], 1.0 / fan_in.sqrt());
        Ok(Self {
            chars: list,
            index,
            char_dim,
            width,
            out_dim,
            table,
            conv_w,
            conv_b,
        })
    }

    pub fn alphabet(&self) -> &[char] {
        &self.chars
    }

    pub fn options(&self) -> CharOptions {
        CharOptions {
            char_dim: self.char_dim,
            width: self.width,
            out_dim: self.out_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.table, self.conv_w, self.conv_b]
    }

    pub fn char_id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(CHAR_UNK)
    }

    /// `[n, out_dim]` encodings for `n` tokens.
    pub fn encode<O: Ops, S: AsRef<str>>(&self, ops: &mut O, params: &ParamStore, tokens: &[S]) -> Result<O::Var> {
        let pad = self.chars.len() + 1;
        let left = (self.width - 1) / 2;
        let right = self.width - 1 - left;
        let mut ids = Vec::new();
        let mut lengths = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let chars: Vec<usize> = tok.as_ref().chars().map(|c| self.char_id(c)).collect();
            if chars.is_empty() {
                return Err(Error::invalid("empty token"));
            }
            let padded: Vec<usize> = std::iter::repeat(pad)
                .take(left)
                .chain(chars.iter().copied())
                .chain(std::iter::repeat(pad).take(right))
                .collect();
            for window in padded.windows(self.width) {
                ids.extend_from_slice(window);
            }
            lengths.push(chars.len());
        }
        let table = ops.param(params, self.table);
        let zero = ops.constant(Tensor::zeros(&[1, self.char_dim]));
        let table = ops.concat(&[table, zero], 0)?;
        let gathered = ops.gather_rows(&table, &ids)?;
        let total: usize = lengths.iter().sum();
        let windows = ops.reshape(&gathered, &[total, self.width * self.char_dim])?;
        let w = ops.param(params, self.conv_w);
        let b = ops.param(params, self.conv_b);
        let conv = ops.linear(&windows, &w, Some(&b))?;
        let mut pooled = Vec::with_capacity(tokens.len());
        let mut start = 0;
        for len in lengths {
            let rows = ops.slice(&conv, 0, start, len)?;
            pooled.push(ops.max_axis(&rows, 0)?);
            start += len;
        }
        ops.stack(&pooled, 0)
    }
}

/// Word, subword and character representations concatenated per token.
#[derive(Clone, Debug)]
pub struct HmeEmbedder {
    word: MetaEmbedder,
    subword: MetaEmbedder,
    vocab: SubwordVocab,
    chars: CharEncoder,
}

impl HmeEmbedder {
    pub fn new(word: MetaEmbedder, subword: MetaEmbedder, vocab: SubwordVocab, chars: CharEncoder) -> Self {
        Self {
            word,
            subword,
            vocab,
            chars,
        }
    }

    pub fn word(&self) -> &MetaEmbedder {
        &self.word
    }

    pub fn subword(&self) -> &MetaEmbedder {
        &self.subword
    }

    pub fn vocab(&self) -> &SubwordVocab {
        &self.vocab
    }

    pub fn chars(&self) -> &CharEncoder {
        &self.chars
    }

    pub fn out_dim(&self) -> usize {
        self.word.out_dim() + self.subword.out_dim() + self.chars.out_dim()
    }

    /// Distinct subword units of `tokens` and the `[n, units]` mean-pooling
    /// matrix mapping unit rows back to tokens.
    pub fn pooling<S: AsRef<str>>(&self, tokens: &[S]) -> (Vec<String>, Tensor) {
        let mut units: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut per_token = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let ids: Vec<usize> = self
                .vocab
                .segment(tok.as_ref())
                .into_iter()
                .map(|u| {
                    let next = units.len();
                    *index.entry(u.clone()).or_insert_with(|| {
                        units.push(u);
                        next
                    })
                })
                .collect();
            per_token.push(ids);
        }
        let u = units.len();
        let mut pool = vec![0.0; tokens.len() * u];
        for (i, ids) in per_token.iter().enumerate() {
            let w = 1.0 / ids.len() as f64;
            for &id in ids {
                pool[i * u + id] += w;
            }
        }
        (units, Tensor::new(vec![tokens.len(), u], pool).expect("non-empty"))
    }

    pub fn embed<O: Ops, S: AsRef<str>>(
        &self,
        ops: &mut O,
        params: &ParamStore,
        tokens: &[S],
    ) -> Result<Combined<O::Var>> {
        let word = self.word.embed(ops, params, tokens)?;
        let (units, pool) = self.pooling(tokens);
        let sub = self.subword.embed(ops, params, &units)?;
        let pool = ops.constant(pool);
        let sub = ops.matmul(&pool, &sub.output)?;
        let chars = self.chars.encode(ops, params, tokens)?;
        let output = ops.concat(&[word.output, sub, chars], 1)?;
        Ok(Combined {
            output,
            alpha: word.alpha,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, sgd_step, Eval, Graph};
    use proptest::prelude::*;

    fn table(words: &[&str], dim: usize, seed: u64) -> Arc<EmbeddingTable> {
        let t = rng::uniform(&[words.len(), dim], 1.0, seed, 0);
        Arc::new(
            EmbeddingTable::new(
                dim,
                words.iter().enumerate().map(|(i, w)| (w.to_string(), t.row(i).to_vec())),
            )
            .unwrap(),
        )
    }

    fn run<F>(f: F) -> Tensor
    where
        F: FnOnce(&mut Eval) -> Result<Tensor>,
    {
        f(&mut Eval::new()).unwrap()
    }

    fn set(params: &mut ParamStore, id: ParamId, rows: &[Vec<f64>]) {
        params.set(id, Tensor::from_rows(rows)).unwrap();
    }

    fn matvec_rows(x: &[f64], w: &Tensor) -> Vec<f64> {
        let (d, dp) = (w.rows(), w.cols());
        (0..dp).map(|c| (0..d).map(|r| x[r] * w.get(&[r, c])).sum()).collect()
    }

    #[test]
    fn concat_examples() {
        let mut ps = ParamStore::new();
        let out = run(|e| {
            let a = e.constant(Tensor::from_rows(&[vec![1.0, 2.0]]));
            let b = e.constant(Tensor::from_rows(&[vec![3.0, 4.0, 5.0]]));
            let m = combine_with(e, &ps, &[a, b], MetaOptions::concat(), &[], None)?;
            Ok(m.output)
        });
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let single = run(|e| {
            let a = e.constant(Tensor::from_rows(&[vec![7.0, 8.0]]));
            Ok(combine_with(e, &ps, &[a], MetaOptions::concat(), &[], None)?.output)
        });
        assert_eq!(single.data(), &[7.0, 8.0]);
        let _ = &mut ps;
    }

    #[test]
    fn linear_examples() {
        let mut ps = ParamStore::new();
        let (proj, _) = register(&mut ps, "m", &[2, 2], MetaOptions::linear(2), 1).unwrap();
        set(&mut ps, proj[0], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        set(&mut ps, proj[1], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = run(|e| {
            let a = e.constant(Tensor::from_rows(&[vec![1.0, 0.0]]));
            let b = e.constant(Tensor::from_rows(&[vec![0.0, 1.0]]));
            Ok(combine_with(e, &ps, &[a, b], MetaOptions::linear(2), &proj, None)?.output)
        });
        assert_eq!(out.data(), &[1.0, 1.0]);

        let mut ps = ParamStore::new();
        let (proj, _) = register(&mut ps, "m", &[1, 1], MetaOptions::linear(1), 1).unwrap();
        set(&mut ps, proj[0], &[vec![2.0]]);
        set(&mut ps, proj[1], &[vec![3.0]]);
        let out = run(|e| {
            let a = e.constant(Tensor::scalar(1.0).reshaped(vec![1, 1]));
            let b = e.constant(Tensor::scalar(1.0).reshaped(vec![1, 1]));
            Ok(combine_with(e, &ps, &[a, b], MetaOptions::linear(1), &proj, None)?.output)
        });
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn linear_matches_matrix_oracle() {
        let mut ps = ParamStore::new();
        let (proj, _) = register(&mut ps, "m", &[4, 4, 4], MetaOptions::linear(2), 9).unwrap();
        let xs: Vec<Tensor> = (0..3).map(|j| rng::uniform(&[1, 4], 1.0, 10, j)).collect();
        let out = run(|e| {
            let inputs: Vec<Tensor> = xs.iter().map(|x| e.constant(x.clone())).collect();
            Ok(combine_with(e, &ps, &inputs, MetaOptions::linear(2), &proj, None)?.output)
        });
        let mut expect = [0.0; 2];
        for (x, &p) in xs.iter().zip(&proj) {
            let y = matvec_rows(x.data(), ps.get(p));
            expect[0] += y[0];
            expect[1] += y[1];
        }
        for (a, b) in out.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_two_sources_scalar_oracle() {
        // d' = 1, x'1 = 0, x'2 = 1 (identity projections on the inputs).
        let opts = MetaOptions::attention(1);
        let mut ps = ParamStore::new();
        let (proj, _) = register(&mut ps, "m", &[1, 1], opts, 1).unwrap();
        set(&mut ps, proj[0], &[vec![1.0]]);
        set(&mut ps, proj[1], &[vec![1.0]]);
        let mut e = Eval::new();
        let a = e.constant(Tensor::from_rows(&[vec![0.0]]));
        let b = e.constant(Tensor::from_rows(&[vec![1.0]]));
        let m = combine_with(&mut e, &ps, &[a, b], opts, &proj, None).unwrap();
        let t = 1f64.tanh();
        let a1 = 1.0 / (1.0 + t.exp());
        let a2 = t.exp() / (1.0 + t.exp());
        let alpha = m.alpha.unwrap();
        assert!((alpha.data()[0] - a1).abs() < 1e-15);
        assert!((alpha.data()[1] - a2).abs() < 1e-15);
        assert!((m.output.item() - a2).abs() < 1e-15);
    }

    #[test]
    fn attention_degenerate_cases() {
        let opts = MetaOptions::attention(3);
        // Single source: weights are one and the output is the projection.
        let mut ps = ParamStore::new();
        let (proj, _) = register(&mut ps, "m", &[4], opts, 2).unwrap();
        let x = rng::uniform(&[2, 4], 1.0, 3, 0);
        let mut e = Eval::new();
        let xv = e.constant(x.clone());
        let m = combine_with(&mut e, &ps, std::slice::from_ref(&xv), opts, &proj, None).unwrap();
        assert!(m.alpha.unwrap().data().iter().all(|&a| a == 1.0));
        let lin = combine_with(&mut e, &ps, &[xv], MetaOptions::linear(3), &proj, None).unwrap();
        assert!(m.output.max_abs_diff(&lin.output) < 1e-15);

        // Identical projected vectors: uniform weights, output equals x'.
        let mut ps = ParamStore::new();
        let (proj, _) = register(&mut ps, "m", &[4, 4, 4], opts, 2).unwrap();
        let w = ps.get(proj[0]).clone();
        ps.set(proj[1], w.clone()).unwrap();
        ps.set(proj[2], w.clone()).unwrap();
        let inputs = vec![e.constant(x.clone()), e.constant(x.clone()), e.constant(x.clone())];
        let m = combine_with(&mut e, &ps, &inputs, opts, &proj, None).unwrap();
        assert!(m.alpha.unwrap().data().iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-15));
        let xp = e.matmul(&x, &w).unwrap();
        assert!(m.output.max_abs_diff(&xp) < 1e-12);
    }

    #[test]
    fn scalar_attention_shares_weight_across_dimensions() {
        let opts = MetaOptions {
            scalar_attention: true,
            ..MetaOptions::attention(3)
        };
        let src = [table(&["a", "b"], 4, 1), table(&["a", "b"], 5, 2)];
        let mut ps = ParamStore::new();
        let m = MetaEmbedder::new(&mut ps, "m", src.to_vec(), opts, 4).unwrap();
        let out = m.embed(&mut Eval::new(), &ps, &["a", "b", "zz"]).unwrap();
        let trace = AttentionTrace::new(out.alpha.unwrap());
        assert_eq!(trace.weight(0, 0).len(), 1);
        for i in 0..3 {
            let s: f64 = (0..2).map(|j| trace.weight(i, j)[0]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn char_encoder_unknowns_and_shape() {
        let mut ps = ParamStore::new();
        let enc = CharEncoder::new(&mut ps, "c", "abc".chars(), CharOptions::default(), 7).unwrap();
        let mut e = Eval::new();
        let out = enc.encode(&mut e, &ps, &["a", "ab", "abx", "aby"]).unwrap();
        assert_eq!(out.shape(), &[4, 50]);
        assert!(out.is_finite());
        assert_eq!(out.row(2), out.row(3));
        let again = enc.encode(&mut e, &ps, &["a"]).unwrap();
        assert_eq!(again.row(0), out.row(0));
    }

    #[test]
    fn char_max_pool_dominance() {
        // Width 1, char_dim 1, identity conv: output = max over char
        // embeddings. Make 'b' dominate every dimension.
        let opts = CharOptions {
            char_dim: 2,
            width: 1,
            out_dim: 2,
        };
        let mut ps = ParamStore::new();
        let enc = CharEncoder::new(&mut ps, "c", "ab".chars(), opts, 1).unwrap();
        let [table, w, b] = enc.params();
        set(&mut ps, table, &[vec![0.0, 0.0], vec![-1.0, 0.5], vec![3.0, 2.0]]);
        set(&mut ps, w, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        ps.set(b, Tensor::vector(vec![0.1, -0.1])).unwrap();
        let out = enc.encode(&mut Eval::new(), &ps, &["aba"]).unwrap();
        assert_eq!(out.data(), &[3.1, 1.9]);
        // Width 3 over a single char sees zero padding on both sides.
        let opts = CharOptions { width: 3, ..opts };
        let mut ps = ParamStore::new();
        let enc = CharEncoder::new(&mut ps, "c", "ab".chars(), opts, 1).unwrap();
        let [table, w, b] = enc.params();
        set(&mut ps, table, &[vec![0.0, 0.0], vec![-1.0, 0.5], vec![3.0, 2.0]]);
        let mut rows = vec![vec![0.0, 0.0]; 6];
        rows[2] = vec![1.0, 0.0]; // centre position, dimension 0
        rows[3] = vec![0.0, 1.0];
        set(&mut ps, w, &rows);
        ps.set(b, Tensor::vector(vec![0.0, 0.0])).unwrap();
        let out = enc.encode(&mut Eval::new(), &ps, &["b"]).unwrap();
        assert_eq!(out.data(), &[3.0, 2.0]);
    }

    fn hme(ps: &mut ParamStore) -> HmeEmbedder {
        let words = vec![table(&["casa", "house"], 4, 1), table(&["casa", "house"], 3, 2)];
        let units = ["ca", "sa", "ho", "use"];
        let subs = vec![table(&units, 3, 3), table(&units, 2, 4)];
        let word = MetaEmbedder::new(ps, "word", words, MetaOptions::attention(5), 1).unwrap();
        let subword = MetaEmbedder::new(ps, "sub", subs, MetaOptions::attention(4), 1).unwrap();
        let vocab = SubwordVocab::new(units.iter().map(|s| s.to_string()), "casahouse".chars()).unwrap();
        let chars = CharEncoder::new(
            ps,
            "char",
            "casahouse".chars(),
            CharOptions {
                char_dim: 3,
                width: 3,
                out_dim: 6,
            },
            1,
        )
        .unwrap();
        HmeEmbedder::new(word, subword, vocab, chars)
    }

    #[test]
    fn hme_shape_and_subword_mean() {
        let mut ps = ParamStore::new();
        let h = hme(&mut ps);
        let mut e = Eval::new();
        let out = h.embed(&mut e, &ps, &["casa", "ho"]).unwrap().output;
        assert_eq!(out.shape(), &[2, 5 + 4 + 6]);
        assert_eq!(h.out_dim(), 15);
        // Subword block of "casa" = mean of the "ca" and "sa" unit outputs;
        // "ho" is a single unit.
        let units = h.subword().embed(&mut e, &ps, &["ca", "sa", "ho"]).unwrap().output;
        for c in 0..4 {
            let mean = 0.5 * (units.get(&[0, c]) + units.get(&[1, c]));
            assert!((out.get(&[0, 5 + c]) - mean).abs() < 1e-12);
            assert!((out.get(&[1, 5 + c]) - units.get(&[2, c])).abs() < 1e-12);
        }
    }

    #[test]
    fn combiners_pass_grad_check() {
        for opts in [
            MetaOptions::linear(3),
            MetaOptions::attention(3),
            MetaOptions {
                scalar_attention: true,
                ..MetaOptions::attention(3)
            },
        ] {
            let mut ps = ParamStore::new();
            let src = vec![table(&["a", "b", "c"], 4, 1), table(&["a", "b", "c"], 2, 2)];
            let m = MetaEmbedder::new(&mut ps, "m", src, opts, 3).unwrap();
            let target = rng::uniform(&[3, 3], 1.0, 5, 0);
            let report = grad_check(
                &ps,
                |g, p| {
                    let out = m.embed(g, p, &["a", "c", "b"])?.output;
                    let t = g.constant(target.clone());
                    let prod = g.mul(&out, &t)?;
                    let y = g.tanh(&prod)?;
                    g.sum_all(&y)
                },
                1e-5,
                200,
                1,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{opts:?}: {report:?}");
        }
    }

    #[test]
    fn hme_grad_check_and_frozen_tables() {
        let mut ps = ParamStore::new();
        let h = hme(&mut ps);
        let before: Vec<Vec<f64>> = h.word().sources().iter().chain(h.subword().sources()).map(|t| t.matrix().to_vec()).collect();
        let loss = |g: &mut Graph, p: &ParamStore| -> Result<_> {
            let out = h.embed(g, p, &["casa", "hoxx"])?.output;
            let sq = g.mul(&out, &out)?;
            let y = g.tanh(&sq)?;
            g.sum_all(&y)
        };
        let report = grad_check(&ps, loss, 1e-5, 300, 2).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        for _ in 0..3 {
            let mut g = Graph::new();
            let l = loss(&mut g, &ps).unwrap();
            let grads = g.backward(l).unwrap();
            sgd_step(&mut ps, &grads, 0.1);
        }
        let after: Vec<Vec<f64>> = h.word().sources().iter().chain(h.subword().sources()).map(|t| t.matrix().to_vec()).collect();
        assert_eq!(before, after);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn concat_dim_law_and_slices(dims in prop::collection::vec(1usize..6, 1..5), n in 1usize..4, seed in any::<u64>()) {
            let ps = ParamStore::new();
            let xs: Vec<Tensor> = dims.iter().enumerate().map(|(j, &d)| rng::uniform(&[n, d], 1.0, seed, j as u64)).collect();
            let mut e = Eval::new();
            let inputs: Vec<Tensor> = xs.iter().map(|x| e.constant(x.clone())).collect();
            let out = combine_with(&mut e, &ps, &inputs, MetaOptions::concat(), &[], None).unwrap().output;
            prop_assert_eq!(out.shape(), &[n, dims.iter().sum::<usize>()][..]);
            let mut off = 0;
            for x in &xs {
                let d = x.cols();
                for i in 0..n {
                    prop_assert_eq!(&out.row(i)[off..off + d], x.row(i));
                }
                off += d;
            }
        }

        #[test]
        fn attention_weights_are_distributions(k in 1usize..5, n in 1usize..4, seed in any::<u64>()) {
            let words = ["x", "y", "z"];
            let src: Vec<Arc<EmbeddingTable>> = (0..k).map(|j| table(&words, 2 + j, seed ^ j as u64)).collect();
            let mut ps = ParamStore::new();
            let m = MetaEmbedder::new(&mut ps, "m", src, MetaOptions::attention(3), seed).unwrap();
            let toks: Vec<&str> = (0..n).map(|i| words[i % 3]).collect();
            let out = m.embed(&mut Eval::new(), &ps, &toks).unwrap();
            let trace = AttentionTrace::new(out.alpha.unwrap());
            for i in 0..n {
                for c in 0..3 {
                    let s: f64 = (0..k).map(|j| trace.weight(i, j)[c]).sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                    prop_assert!((0..k).all(|j| trace.weight(i, j)[c] >= 0.0));
                }
            }
        }
    }
}
