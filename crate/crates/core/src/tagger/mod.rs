//! Transformer + CRF sequence tagger.

mod crf;
mod embedder;
mod encoder;
mod io;
mod train;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_token, Scheme};
use crate::error::{Error, Result};
use crate::numerics::{rng, Eval, Graph, NodeId, Ops, ParamId, ParamStore, Tensor};

pub use crf::{init_transitions, log_partition, nll as crf_nll, path_score, viterbi, CrfNll, IMPOSSIBLE};
pub use embedder::{corpus_units, Embedded, Embedder, EmbedderSpec, ScratchEmbedder};
pub use encoder::{positions, Encoder, EncoderShape, LN_EPS};
pub use io::MODEL_MAGIC;
pub use train::{train, EpochRecord, TrainReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaggerConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub max_len: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            hidden: 200,
            ff_dim: 800,
            lr: 0.1,
            batch_size: 32,
            early_stop_patience: 10,
            max_epochs: 200,
            seed: 0,
            max_len: 4096,
            clip_norm: 5.0,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("ff_dim", self.ff_dim),
            ("batch_size", self.batch_size),
            ("early_stop_patience", self.early_stop_patience),
            ("max_epochs", self.max_epochs),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return Err(Error::invalid("lr and clip_norm must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamGroup {
    pub name: String,
    pub count: usize,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
    pub frozen: usize,
    pub bytes_32bit: usize,
    pub groups: Vec<ParamGroup>,
}

#[derive(Clone, Debug)]
pub struct TaggerModel {
    config: TaggerConfig,
    labels: Vec<String>,
    label_index: HashMap<String, usize>,
    scheme: Scheme,
    normalize: bool,
    embedder: Embedder,
    encoder: Encoder,
    emit_w: ParamId,
    emit_b: ParamId,
    transitions: ParamId,
    params: ParamStore,
    history: Vec<EpochRecord>,
}

impl TaggerModel {
    /// Adds encoder, emission and CRF parameters to `params`, which must
    /// already hold the embedder's parameters.
    pub fn new(
        config: TaggerConfig,
        labels: Vec<String>,
        scheme: Scheme,
        normalize: bool,
        embedder: Embedder,
        mut params: ParamStore,
    ) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::invalid("empty label set"));
        }
        let label_index: HashMap<String, usize> = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        if label_index.len() != labels.len() {
            return Err(Error::invalid("duplicate labels"));
        }
        let shape = EncoderShape {
            d_in: embedder.out_dim(),
            hidden: config.hidden,
            heads: config.heads,
            layers: config.layers,
            ff_dim: config.ff_dim,
            max_len: config.max_len,
        };
        let encoder = Encoder::new(&mut params, "encoder", &shape, config.seed)?;
        let l = labels.len();
        let bound = 1.0 / (config.hidden as f64).sqrt();
        let emit_w = params.add(
            "emit.w",
            rng::uniform(&[config.hidden, l], bound, config.seed, rng::stream_id("emit.w")),
            false,
            Some(config.seed),
        );
        let emit_b = params.add("emit.b", Tensor::zeros(&[l]), false, None);
        let transitions = params.add("crf.transitions", init_transitions(l), false, None);
        Ok(Self {
            config,
            labels,
            label_index,
            scheme,
            normalize,
            embedder,
            encoder,
            emit_w,
            emit_b,
            transitions,
            params,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TaggerConfig {
        &self.config
    }

    /// Epoch budget for later calls to [`train`]; layer shapes are fixed at construction.
    pub fn set_max_epochs(&mut self, epochs: usize) {
        self.config.max_epochs = epochs;
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_index.get(label).copied()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn transitions(&self) -> &Tensor {
        self.params.get(self.transitions)
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub(crate) fn set_history(&mut self, history: Vec<EpochRecord>) {
        self.history = history;
    }

    pub fn prepare<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        tokens
            .iter()
            .map(|t| {
                if self.normalize {
                    normalize_token(t.as_ref())
                } else {
                    t.as_ref().to_string()
                }
            })
            .collect()
    }

    /// Emission scores `[n, labels]` for already-prepared tokens.
    pub fn emissions_with<O: Ops, S: AsRef<str>>(&self, ops: &mut O, tokens: &[S]) -> Result<O::Var> {
        let emb = self.embedder.embed(ops, &self.params, tokens)?;
        let h = self.encoder.encode(ops, &self.params, &emb.x, None)?;
        let h = match &emb.first {
            Some(first) => ops.gather_rows(&h, first)?,
            None => h,
        };
        ops.scope("emissions");
        let w = ops.param(&self.params, self.emit_w);
        let b = ops.param(&self.params, self.emit_b);
        ops.linear(&h, &w, Some(&b))
    }

    /// CRF negative log-likelihood of `gold` label ids on a training graph.
    pub fn loss(&self, g: &mut Graph, tokens: &[String], gold: &[usize]) -> Result<NodeId> {
        if tokens.len() != gold.len() {
            return Err(Error::LengthMismatch(format!("{} tokens, {} labels", tokens.len(), gold.len())));
        }
        let e = self.emissions_with(g, tokens)?;
        let t = g.param(&self.params, self.transitions);
        g.custom(&[e, t], CrfNll::new(gold.to_vec()))
    }

    pub fn predict_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<String>> {
        if tokens.is_empty() {
            return Err(Error::NoTokens);
        }
        let prepared = self.prepare(tokens);
        let e = self.emissions_with(&mut Eval::new(), &prepared)?;
        let (path, _) = viterbi(&e, self.transitions())?;
        Ok(path.into_iter().map(|y| self.labels[y].clone()).collect())
    }

    /// Labels for each sentence; sentences are decoded independently, so
    /// the result does not depend on how inputs are grouped.
    pub fn predict<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> Result<Vec<Vec<String>>> {
        sentences.iter().map(|s| self.predict_sentence(s)).collect()
    }

    pub fn count_params(&self) -> ParamCount {
        let mut groups = Vec::new();
        for (i, t) in self.embedder.tables().iter().enumerate() {
            groups.push(ParamGroup {
                name: format!("table{i}.matrix"),
                count: t.len() * t.dim(),
                frozen: true,
            });
            if let Some(b) = t.buckets() {
                groups.push(ParamGroup {
                    name: format!("table{i}.buckets"),
                    count: b.count() * b.dim(),
                    frozen: true,
                });
            }
        }
        for e in self.params.entries() {
            groups.push(ParamGroup {
                name: e.name.clone(),
                count: e.tensor.numel(),
                frozen: e.frozen,
            });
        }
        let frozen = groups.iter().filter(|g| g.frozen).map(|g| g.count).sum();
        let trainable = groups.iter().filter(|g| !g.frozen).map(|g| g.count).sum();
        let total = frozen + trainable;
        ParamCount {
            total,
            trainable,
            frozen,
            bytes_32bit: 4 * total,
            groups,
        }
    }
}
