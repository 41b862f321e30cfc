//! Generated code-switched corpora and matching embedding tables, for tests,
//! benchmarks and desk-scale experiments.
//!
//! Two disjoint lexicons are built from syllables: the matrix language (ML,
//! tag `lang1`) uses consonants `k t m n p` with vowels `a i u`, the embedded
//! language (EL, tag `lang2`) uses `b d g l r s v z` with `e o`. A word's
//! class (N or V) is fixed by its first syllable. Labels are `FIRST` for the
//! first token of a sentence and `{ML|EL}-{N|V}` elsewhere.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{LabeledDataset, Scheme, Sentence};
use crate::embeddings::{Buckets, EmbeddingTable, DEFAULT_NGRAM_RANGE};
use crate::error::Result;
use crate::numerics::rng::{stream_id, stream_rng};

pub const ML_TAG: &str = "lang1";
pub const EL_TAG: &str = "lang2";

const ML_CONSONANTS: &[char] = &['k', 't', 'm', 'n', 'p'];
const ML_VOWELS: &[char] = &['a', 'i', 'u'];
const EL_CONSONANTS: &[char] = &['b', 'd', 'g', 'l', 'r', 's', 'v', 'z'];
const EL_VOWELS: &[char] = &['e', 'o'];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lang {
    Ml,
    El,
}

impl Lang {
    fn parts(self) -> (&'static [char], &'static [char]) {
        match self {
            Lang::Ml => (ML_CONSONANTS, ML_VOWELS),
            Lang::El => (EL_CONSONANTS, EL_VOWELS),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Lang::Ml => ML_TAG,
            Lang::El => EL_TAG,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Lang::Ml => "ML",
            Lang::El => "EL",
        }
    }

    pub fn syllables(self) -> Vec<String> {
        let (cs, vs) = self.parts();
        cs.iter().flat_map(|c| vs.iter().map(move |v| format!("{c}{v}"))).collect()
    }
}

/// Noun when the first consonant sits at an even position of its
/// language's consonant list.
pub fn is_noun(word: &str) -> bool {
    let c = word.chars().next().expect("non-empty word");
    ML_CONSONANTS
        .iter()
        .chain(EL_CONSONANTS)
        .position(|&x| x == c)
        .map(|p| {
            let p = if p >= ML_CONSONANTS.len() { p - ML_CONSONANTS.len() } else { p };
            p % 2 == 0
        })
        .unwrap_or(false)
}

pub fn word_label(lang: Lang, word: &str) -> String {
    format!("{}-{}", lang.prefix(), if is_noun(word) { "N" } else { "V" })
}

pub const FIRST_LABEL: &str = "FIRST";

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub words_per_language: usize,
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token is drawn from the ML lexicon.
    pub ml_share: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            words_per_language: 200,
            train_sentences: 300,
            dev_sentences: 100,
            min_len: 4,
            max_len: 10,
            ml_share: 0.6,
            seed: 13,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub train: LabeledDataset,
    pub dev: LabeledDataset,
    pub ml_words: Vec<String>,
    pub el_words: Vec<String>,
}

fn lexicon(lang: Lang, n: usize, seed: u64) -> Vec<String> {
    let syl = lang.syllables();
    let mut rng = stream_rng(seed, stream_id(lang.tag()));
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k = rng.random_range(2..=3);
        let w: String = (0..k).map(|_| syl.choose(&mut rng).expect("syllables").as_str()).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn sentences(spec: &SyntheticSpec, ml: &[String], el: &[String], count: usize, stream: &str) -> Result<LabeledDataset> {
    let mut rng = stream_rng(spec.seed, stream_id(stream));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let (mut toks, mut labels, mut langs) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..len {
            let lang = if rng.random_bool(spec.ml_share) { Lang::Ml } else { Lang::El };
            let pool = if lang == Lang::Ml { ml } else { el };
            let w = pool.choose(&mut rng).expect("lexicon").clone();
            labels.push(if i == 0 { FIRST_LABEL.to_string() } else { word_label(lang, &w) });
            langs.push(lang.tag().to_string());
            toks.push(w);
        }
        out.push(Sentence::new(toks, labels, Some(langs))?);
    }
    LabeledDataset::new(out, Some(Scheme::Pos))
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    let ml_words = lexicon(Lang::Ml, spec.words_per_language, spec.seed);
    let el_words = lexicon(Lang::El, spec.words_per_language, spec.seed);
    let train = sentences(spec, &ml_words, &el_words, spec.train_sentences, "train")?;
    let dev = sentences(spec, &ml_words, &el_words, spec.dev_sentences, "dev")?;
    Ok(SyntheticCorpus {
        train,
        dev,
        ml_words,
        el_words,
    })
}

/// Pretrained-style tables for the synthetic lexicons: one word table and
/// one syllable table per language. Vectors carry the N/V class along the
/// first two axes plus Gaussian noise; word tables get random OOV buckets.
#[derive(Clone, Debug)]
pub struct SyntheticTables {
    pub ml_words: Arc<EmbeddingTable>,
    pub el_words: Arc<EmbeddingTable>,
    pub ml_syllables: Arc<EmbeddingTable>,
    pub el_syllables: Arc<EmbeddingTable>,
}

pub const SYNTHETIC_BUCKETS: usize = 2003;

fn signal_rows(words: &[String], dim: usize, noise: f64, seed: u64, stream: &str) -> Vec<(String, Vec<f64>)> {
    let mut rng = stream_rng(seed, stream_id(stream));
    let normal = Normal::new(0.0, noise).expect("positive std");
    words
        .iter()
        .map(|w| {
            let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            v[if is_noun(w) { 0 } else { 1 % dim }] += 1.0;
            (w.clone(), v)
        })
        .collect()
}

fn word_table(words: &[String], dim: usize, seed: u64, stream: &str) -> Result<EmbeddingTable> {
    let table = EmbeddingTable::new(dim, signal_rows(words, dim, 0.3, seed, stream))?;
    let mut rng = stream_rng(seed, stream_id(&format!("{stream}.buckets")));
    let normal = Normal::new(0.0, 1.0).expect("positive std");
    let data = (0..SYNTHETIC_BUCKETS * dim).map(|_| normal.sample(&mut rng)).collect();
    table.with_buckets(Buckets::new(SYNTHETIC_BUCKETS, dim, data)?, DEFAULT_NGRAM_RANGE)
}

pub fn tables(corpus: &SyntheticCorpus, dim: usize, seed: u64) -> Result<SyntheticTables> {
    let syl = |lang: Lang| -> Result<EmbeddingTable> {
        let units = lang.syllables();
        EmbeddingTable::new(dim, signal_rows(&units, dim, 0.3, seed, &format!("{}.syllables", lang.tag())))
    };
    Ok(SyntheticTables {
        ml_words: Arc::new(word_table(&corpus.ml_words, dim, seed, "ml.words")?),
        el_words: Arc::new(word_table(&corpus.el_words, dim, seed, "el.words")?),
        ml_syllables: Arc::new(syl(Lang::Ml)?),
        el_syllables: Arc::new(syl(Lang::El)?),
    })
}

/// Every character used by either lexicon.
pub fn alphabet() -> String {
    ML_CONSONANTS.iter().chain(ML_VOWELS).chain(EL_CONSONANTS).chain(EL_VOWELS).collect()
}

/// Label frequencies, handy for sanity checks.
pub fn label_counts(data: &LabeledDataset) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for l in data.sentences().iter().flat_map(|s| &s.labels) {
        *m.entry(l.clone()).or_insert(0) += 1;
    }
    m
}


/// Small-dimension presets over the synthetic corpus, used by tests,
/// benches and the desk-scale experiments.
pub mod toy {
    use super::*;
    use crate::meta::CharOptions;
    use crate::presets::{build_model, Mode, Recipe, Resources};
    use crate::tagger::{TaggerConfig, TaggerModel};

    pub const TABLE_DIM: usize = 32;
    pub const HIDDEN: usize = 32;
    pub const SCRATCH_UNITS: usize = 300;

    pub fn config(seed: u64) -> TaggerConfig {
        TaggerConfig {
            layers: 2,
            heads: 4,
            hidden: HIDDEN,
            ff_dim: 64,
            lr: 0.1,
            batch_size: 8,
            early_stop_patience: 10,
            max_epochs: 50,
            seed,
            max_len: 4096,
            clip_norm: 5.0,
        }
    }

    pub fn recipe(mode: Mode) -> Recipe {
        Recipe {
            mode,
            d_prime: 32,
            subword_d_prime: 16,
            chars: CharOptions {
                char_dim: 8,
                width: 3,
                out_dim: 8,
            },
            scratch_max_units: SCRATCH_UNITS,
            ..Recipe::default()
        }
    }

    /// `word-single` sees only the ML word table; the other pipelines see
    /// both languages.
    pub fn resources(mode: Mode, tables: &SyntheticTables) -> Resources {
        let word_tables = match mode {
            Mode::WordSingle => vec![tables.ml_words.clone()],
            _ => vec![tables.ml_words.clone(), tables.el_words.clone()],
        };
        let subword_tables = match mode {
            Mode::Hme => vec![tables.ml_syllables.clone(), tables.el_syllables.clone()],
            _ => Vec::new(),
        };
        Resources {
            word_tables,
            subword_tables,
            ..Default::default()
        }
    }

    pub fn model(mode: Mode, corpus: &SyntheticCorpus, tables: &SyntheticTables, seed: u64) -> Result<TaggerModel> {
        build_model(
            &recipe(mode),
            &config(seed),
            corpus.train.label_set().to_vec(),
            corpus.train.scheme(),
            &resources(mode, tables),
            corpus.train.sentences().iter().flat_map(|s| s.tokens.iter().map(String::as_str)),
        )
    }
}
