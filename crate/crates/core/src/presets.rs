//! Model menu: maps a pipeline name and embedding resources to a tagger.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Scheme;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::meta::{CharOptions, MetaOptions, Scorer};
use crate::numerics::ParamStore;
use crate::tagger::{corpus_units, EmbedderSpec, TaggerConfig, TaggerModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    WordSingle,
    MmeConcat,
    MmeLinear,
    MmeAttention,
    Hme,
    Scratch,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::WordSingle,
        Mode::MmeConcat,
        Mode::MmeLinear,
        Mode::MmeAttention,
        Mode::Hme,
        Mode::Scratch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::WordSingle => "word-single",
            Mode::MmeConcat => "mme-concat",
            Mode::MmeLinear => "mme-linear",
            Mode::MmeAttention => "mme-attention",
            Mode::Hme => "hme",
            Mode::Scratch => "scratch",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mode {s:?}")))
    }
}

/// Embedder-side choices; tagger sizes live in [`TaggerConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Recipe {
    pub mode: Mode,
    /// Projected width for word-level linear/attention combiners.
    pub d_prime: usize,
    /// Projected width for the subword combiner of HME.
    pub subword_d_prime: usize,
    pub scalar_attention: bool,
    pub scorer: Scorer,
    pub chars: CharOptions,
    pub subword_start_marker: Option<char>,
    /// Scratch embedding width; the encoder hidden size when unset.
    pub scratch_dim: Option<usize>,
    pub scratch_max_units: usize,
    pub scratch_max_unit_len: usize,
    /// Token normalization; on for embedding pipelines, off for scratch when unset.
    pub normalize: Option<bool>,
}

impl Default for Recipe {
    fn default() -> Self {
        Self {
            mode: Mode::MmeAttention,
            d_prime: 300,
            subword_d_prime: 300,
            scalar_attention: false,
            scorer: Scorer::Tanh,
            chars: CharOptions::default(),
            subword_start_marker: None,
            scratch_dim: None,
            scratch_max_units: 2000,
            scratch_max_unit_len: 4,
            normalize: None,
        }
    }
}

impl Recipe {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    fn combiner(&self, d_prime: usize) -> MetaOptions {
        let mode = match self.mode {
            Mode::WordSingle | Mode::MmeConcat => return MetaOptions::concat(),
            Mode::MmeLinear => crate::meta::Combine::Linear,
            Mode::MmeAttention | Mode::Hme | Mode::Scratch => crate::meta::Combine::Attention,
        };
        MetaOptions {
            mode,
            d_prime,
            scorer: self.scorer,
            scalar_attention: self.scalar_attention,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Resources {
    pub word_tables: Vec<Arc<EmbeddingTable>>,
    pub subword_tables: Vec<Arc<EmbeddingTable>>,
    /// Replaces the corpus-derived scratch unit inventory.
    pub scratch_units: Option<Vec<String>>,
}

/// Builds an untrained tagger. `vocabulary` (typically the training tokens)
/// supplies the character alphabet and the scratch subword inventory.
pub fn build_model<'a>(
    recipe: &Recipe,
    config: &TaggerConfig,
    labels: Vec<String>,
    scheme: Scheme,
    resources: &Resources,
    vocabulary: impl IntoIterator<Item = &'a str>,
) -> Result<TaggerModel> {
    let normalize = recipe.normalize.unwrap_or(recipe.mode != Mode::Scratch);
    let vocab: Vec<String> = vocabulary
        .into_iter()
        .map(|t| if normalize { crate::corpus::normalize_token(t) } else { t.to_string() })
        .collect();
    let n_word = resources.word_tables.len();
    let need = |n: usize, what: &str| -> Result<()> {
        if n == 0 {
            Err(Error::invalid(format!("{} pipeline needs at least one {what} table", recipe.mode)))
        } else {
            Ok(())
        }
    };
    let (spec, tables) = match recipe.mode {
        Mode::WordSingle => {
            need(n_word, "word")?;
            (
                EmbedderSpec::Meta {
                    sources: vec![0],
                    options: MetaOptions::concat(),
                },
                vec![resources.word_tables[0].clone()],
            )
        }
        Mode::MmeConcat | Mode::MmeLinear | Mode::MmeAttention => {
            need(n_word, "word")?;
            (
                EmbedderSpec::Meta {
                    sources: (0..n_word).collect(),
                    options: recipe.combiner(recipe.d_prime),
                },
                resources.word_tables.clone(),
            )
        }
        Mode::Hme => {
            need(n_word, "word")?;
            need(resources.subword_tables.len(), "subword")?;
            let alphabet: BTreeSet<char> = vocab.iter().flat_map(|t| t.chars()).collect();
            let mut units: Vec<String> = Vec::new();
            let mut seen = BTreeSet::new();
            for t in &resources.subword_tables {
                for w in t.words() {
                    if seen.insert(w.clone()) {
                        units.push(w.clone());
                    }
                }
            }
            for c in &alphabet {
                let s = c.to_string();
                if seen.insert(s.clone()) {
                    units.push(s);
                }
            }
            let n_sub = resources.subword_tables.len();
            let mut tables = resources.word_tables.clone();
            tables.extend(resources.subword_tables.iter().cloned());
            (
                EmbedderSpec::Hme {
                    word_sources: (0..n_word).collect(),
                    word_options: recipe.combiner(recipe.d_prime),
                    subword_sources: (n_word..n_word + n_sub).collect(),
                    subword_options: recipe.combiner(recipe.subword_d_prime),
                    units,
                    start_marker: recipe.subword_start_marker,
                    alphabet: alphabet.into_iter().collect(),
                    chars: recipe.chars,
                },
                tables,
            )
        }
        Mode::Scratch => (
            EmbedderSpec::Scratch {
                units: match &resources.scratch_units {
                    Some(u) => u.clone(),
                    None => corpus_units(vocab.iter().map(String::as_str), recipe.scratch_max_units, recipe.scratch_max_unit_len),
                },
                start_marker: recipe.subword_start_marker,
                dim: recipe.scratch_dim.unwrap_or(config.hidden),
            },
            Vec::new(),
        ),
    };
    let mut params = ParamStore::new();
    let embedder = spec.build(&tables, &mut params, config.seed)?;
    TaggerModel::new(config.clone(), labels, scheme, normalize, embedder, params)
}
