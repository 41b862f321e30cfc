//! Token embedders in front of the encoder.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingTable, SubwordVocab, UNK_UNIT};
use crate::error::{Error, Result};
use crate::meta::{CharEncoder, CharOptions, HmeEmbedder, MetaEmbedder, MetaOptions};
use crate::numerics::{rng, Ops, ParamId, ParamStore};

/// Serializable recipe for an [`Embedder`]. Tables are referenced by
/// position in the list handed to [`EmbedderSpec::build`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderSpec {
    /// One or more frozen word tables; a single source with concat is the
    /// plain word-embedding tagger.
    Meta { sources: Vec<usize>, options: MetaOptions },
    Hme {
        word_sources: Vec<usize>,
        word_options: MetaOptions,
        subword_sources: Vec<usize>,
        subword_options: MetaOptions,
        units: Vec<String>,
        start_marker: Option<char>,
        alphabet: String,
        chars: CharOptions,
    },
    /// Randomly initialised, trainable subword embeddings.
    Scratch {
        units: Vec<String>,
        start_marker: Option<char>,
        dim: usize,
    },
}

#[derive(Clone, Debug)]
pub struct ScratchEmbedder {
    vocab: SubwordVocab,
    index: HashMap<String, usize>,
    table: ParamId,
    dim: usize,
}

impl ScratchEmbedder {
    pub fn vocab(&self) -> &SubwordVocab {
        &self.vocab
    }

    pub fn table(&self) -> ParamId {
        self.table
    }

    /// Unit ids of the whole sentence and the position of each token's first unit.
    pub fn unit_ids<S: AsRef<str>>(&self, tokens: &[S]) -> (Vec<usize>, Vec<usize>) {
        let mut ids = Vec::new();
        let mut first = Vec::with_capacity(tokens.len());
        for tok in tokens {
            first.push(ids.len());
            for u in self.vocab.segment(tok.as_ref()) {
                ids.push(self.index.get(&u).copied().unwrap_or(0));
            }
        }
        (ids, first)
    }
}

#[derive(Clone, Debug)]
pub enum Embedder {
    Meta(MetaEmbedder),
    Hme(HmeEmbedder),
    Scratch(ScratchEmbedder),
}

/// Embedded sentence: `[m, d]` rows, where `m` is the token count, or the
/// subword count when `first` maps tokens to their first subword row.
pub struct Embedded<V> {
    pub x: V,
    pub first: Option<Vec<usize>>,
    pub alpha: Option<V>,
}

fn pick(tables: &[Arc<EmbeddingTable>], ids: &[usize]) -> Result<Vec<Arc<EmbeddingTable>>> {
    ids.iter()
        .map(|&i| {
            tables
                .get(i)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("embedder refers to missing table {i}")))
        })
        .collect()
}

fn vocab(units: &[String], start_marker: Option<char>) -> Result<SubwordVocab> {
    let v = SubwordVocab::new(units.iter().cloned(), std::iter::empty())?;
    Ok(match start_marker {
        Some(m) => v.with_start_marker(m),
        None => v,
    })
}

impl EmbedderSpec {
    pub fn build(&self, tables: &[Arc<EmbeddingTable>], params: &mut ParamStore, seed: u64) -> Result<Embedder> {
        Ok(match self {
            EmbedderSpec::Meta { sources, options } => {
                Embedder::Meta(MetaEmbedder::new(params, "embed", pick(tables, sources)?, *options, seed)?)
            }
            EmbedderSpec::Hme {
                word_sources,
                word_options,
                subword_sources,
                subword_options,
                units,
                start_marker,
                alphabet,
                chars,
            } => {
                let word = MetaEmbedder::new(params, "embed.word", pick(tables, word_sources)?, *word_options, seed)?;
                let sub =
                    MetaEmbedder::new(params, "embed.subword", pick(tables, subword_sources)?, *subword_options, seed)?;
                let enc = CharEncoder::new(params, "embed.char", alphabet.chars(), *chars, seed)?;
                Embedder::Hme(HmeEmbedder::new(word, sub, vocab(units, *start_marker)?, enc))
            }
            EmbedderSpec::Scratch {
                units,
                start_marker,
                dim,
            } => {
                if *dim == 0 {
                    return Err(Error::invalid("scratch embedding dimension must be positive"));
                }
                let vocab = vocab(units, *start_marker)?;
                let mut index = HashMap::new();
                index.insert(UNK_UNIT.to_string(), 0);
                for (i, u) in vocab.units().iter().enumerate() {
                    index.insert(u.clone(), i + 1);
                }
                let name = "embed.units";
                let t = rng::normal(&[vocab.units().len() + 1, *dim], 0.02, seed, rng::stream_id(name));
                let table = params.add(name, t, false, Some(seed));
                Embedder::Scratch(ScratchEmbedder {
                    vocab,
                    index,
                    table,
                    dim: *dim,
                })
            }
        })
    }
}

impl Embedder {
    pub fn out_dim(&self) -> usize {
        match self {
            Embedder::Meta(m) => m.out_dim(),
            Embedder::Hme(h) => h.out_dim(),
            Embedder::Scratch(s) => s.dim,
        }
    }

    /// Sequence length seen by the encoder for one sentence.
    pub fn encoder_length<S: AsRef<str>>(&self, tokens: &[S]) -> usize {
        match self {
            Embedder::Scratch(s) => s.unit_ids(tokens).0.len(),
            _ => tokens.len(),
        }
    }

    pub fn is_subword_level(&self) -> bool {
        matches!(self, Embedder::Scratch(_))
    }

    /// Frozen tables, indexed the way [`EmbedderSpec`] source lists index them.
    pub fn tables(&self) -> Vec<Arc<EmbeddingTable>> {
        match self {
            Embedder::Meta(m) => m.sources().to_vec(),
            Embedder::Hme(h) => h.word().sources().iter().chain(h.subword().sources()).cloned().collect(),
            Embedder::Scratch(_) => Vec::new(),
        }
    }

    pub fn spec(&self) -> EmbedderSpec {
        match self {
            Embedder::Meta(m) => EmbedderSpec::Meta {
                sources: (0..m.sources().len()).collect(),
                options: m.options(),
            },
            Embedder::Hme(h) => {
                let nw = h.word().sources().len();
                let ns = h.subword().sources().len();
                EmbedderSpec::Hme {
                    word_sources: (0..nw).collect(),
                    word_options: h.word().options(),
                    subword_sources: (nw..nw + ns).collect(),
                    subword_options: h.subword().options(),
                    units: h.vocab().units().to_vec(),
                    start_marker: h.vocab().start_marker(),
                    alphabet: h.chars().alphabet().iter().collect(),
                    chars: h.chars().options(),
                }
            }
            Embedder::Scratch(s) => EmbedderSpec::Scratch {
                units: s.vocab.units().to_vec(),
                start_marker: s.vocab.start_marker(),
                dim: s.dim,
            },
        }
    }

    pub fn embed<O: Ops, S: AsRef<str>>(&self, ops: &mut O, params: &ParamStore, tokens: &[S]) -> Result<Embedded<O::Var>> {
        if tokens.is_empty() {
            return Err(Error::NoTokens);
        }
        ops.scope("embed");
        match self {
            Embedder::Meta(m) => {
                let c = m.embed(ops, params, tokens)?;
                Ok(Embedded {
                    x: c.output,
                    first: None,
                    alpha: c.alpha,
                })
            }
            Embedder::Hme(h) => {
                let c = h.embed(ops, params, tokens)?;
                Ok(Embedded {
                    x: c.output,
                    first: None,
                    alpha: c.alpha,
                })
            }
            Embedder::Scratch(s) => {
                let (ids, first) = s.unit_ids(tokens);
                let table = ops.param(params, s.table);
                Ok(Embedded {
                    x: ops.gather_rows(&table, &ids)?,
                    first: Some(first),
                    alpha: None,
                })
            }
        }
    }
}

/// Subword units for a scratch model: every character seen in `tokens` plus
/// the `max_units` most frequent substrings of 2 to `max_len` characters
/// (ties broken lexicographically).
pub fn corpus_units<'a>(tokens: impl IntoIterator<Item = &'a str>, max_units: usize, max_len: usize) -> Vec<String> {
    let mut chars = std::collections::BTreeSet::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for tok in tokens {
        let cs: Vec<char> = tok.chars().collect();
        chars.extend(cs.iter().copied());
        for len in 2..=max_len.min(cs.len()) {
            for w in cs.windows(len) {
                *counts.entry(w.iter().collect()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(max_units)
        .map(|(u, _)| u)
        .chain(chars.into_iter().map(String::from))
        .collect()
}
