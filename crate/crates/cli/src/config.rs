//! Run configuration: a JSON file, validated before any heavy work starts.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mmx_core::corpus::Scheme;
use mmx_core::embeddings::{EmbeddingTable, DEFAULT_NGRAM_RANGE};
use mmx_core::presets::{Mode, Recipe, Resources};
use mmx_core::tagger::TaggerConfig;
use serde::Deserialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ner,
    Pos,
}

impl Task {
    pub fn scheme(self) -> Scheme {
        match self {
            Task::Ner => Scheme::BioNer,
            Task::Pos => Scheme::Pos,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingFiles {
    /// `.vec` files, one per word-level source.
    pub word: Vec<PathBuf>,
    /// `.vec` files, one per subword-level source (hme).
    pub subword: Vec<PathBuf>,
    /// One unit per line; replaces the corpus-derived scratch inventory.
    pub subword_vocab: Option<PathBuf>,
    /// Read a `.mmxb` n-gram bucket sidecar next to every word table.
    pub buckets: bool,
    pub ngram_range: (usize, usize),
}

impl Default for EmbeddingFiles {
    fn default() -> Self {
        Self {
            word: Vec::new(),
            subword: Vec::new(),
            subword_vocab: None,
            buckets: false,
            ngram_range: DEFAULT_NGRAM_RANGE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    /// Overrides `tagger.seed` when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub embedder: Recipe,
    #[serde(default)]
    pub embeddings: EmbeddingFiles,
    #[serde(default)]
    pub tagger: TaggerConfig,
}

/// A schema violation located by a JSON pointer into the config file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "config error at {at}: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn escape(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", escape(key))),
            Segment::Enum { variant } => out.push_str(&format!("/{}", escape(variant))),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    out
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let p = pointer(e.path());
            ConfigError::new(p, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Tagger settings with the top-level seed applied.
    pub fn tagger_config(&self) -> TaggerConfig {
        let mut c = self.tagger.clone();
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c
    }

    /// Checks everything that can be checked without reading tables or data:
    /// sizes, per-mode table requirements and that every referenced file exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tagger_config()
            .validate()
            .map_err(|e| ConfigError::new("/tagger", e.to_string()))?;
        let files = &self.embeddings;
        let mode = self.embedder.mode;
        let (lo, hi) = files.ngram_range;
        if lo == 0 || lo > hi {
            return Err(ConfigError::new("/embeddings/ngram_range", format!("invalid range [{lo}, {hi}]")));
        }
        match mode {
            Mode::Scratch => {
                if !files.word.is_empty() || !files.subword.is_empty() {
                    return Err(ConfigError::new("/embeddings", "the scratch pipeline takes no pretrained tables"));
                }
            }
            _ if files.word.is_empty() => {
                return Err(ConfigError::new("/embeddings/word", format!("{mode} needs at least one word table")));
            }
            Mode::WordSingle if files.word.len() > 1 => {
                return Err(ConfigError::new("/embeddings/word", "word-single takes exactly one word table"));
            }
            Mode::Hme if files.subword.is_empty() => {
                return Err(ConfigError::new("/embeddings/subword", "hme needs at least one subword table"));
            }
            _ => {}
        }
        if mode != Mode::Hme && !files.subword.is_empty() {
            return Err(ConfigError::new("/embeddings/subword", format!("{mode} does not use subword tables")));
        }
        if files.subword_vocab.is_some() && mode != Mode::Scratch {
            return Err(ConfigError::new("/embeddings/subword_vocab", "only the scratch pipeline reads a unit list"));
        }
        let exists = |ptr: String, p: &Path| -> Result<(), ConfigError> {
            if p.is_file() {
                Ok(())
            } else {
                Err(ConfigError::new(ptr, format!("file not found: {}", p.display())))
            }
        };
        for (i, p) in files.word.iter().enumerate() {
            exists(format!("/embeddings/word/{i}"), p)?;
            if files.buckets {
                exists(format!("/embeddings/word/{i}"), &EmbeddingTable::bucket_path(p))?;
            }
        }
        for (i, p) in files.subword.iter().enumerate() {
            exists(format!("/embeddings/subword/{i}"), p)?;
        }
        if let Some(p) = &files.subword_vocab {
            exists("/embeddings/subword_vocab".into(), p)?;
        }
        Ok(())
    }

    pub fn load_resources(&self) -> mmx_core::Result<Resources> {
        let files = &self.embeddings;
        let open = |p: &PathBuf, buckets: bool| -> mmx_core::Result<Arc<EmbeddingTable>> {
            log::info!("loading {}", p.display());
            Ok(Arc::new(EmbeddingTable::open(p, buckets, files.ngram_range)?))
        };
        let word_tables = files.word.iter().map(|p| open(p, files.buckets)).collect::<mmx_core::Result<_>>()?;
        let subword_tables = files.subword.iter().map(|p| open(p, false)).collect::<mmx_core::Result<_>>()?;
        let scratch_units = match &files.subword_vocab {
            Some(p) => Some(
                fs::read_to_string(p)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect(),
            ),
            None => None,
        };
        Ok(Resources {
            word_tables,
            subword_tables,
            scratch_units,
        })
    }
}
