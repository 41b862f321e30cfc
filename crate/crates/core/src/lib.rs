//! Code-switching sequence labeling with multilingual meta-embeddings.
//!
//! The crate covers the whole pipeline: CoNLL ingestion and scoring
//! ([`corpus`]), pretrained embedding tables with subword back-off
//! ([`embeddings`]), Procrustes/CSLS space alignment ([`align`]), a small
//! reverse-mode tensor core ([`numerics`]), meta-embedding combiners
//! ([`meta`]), the transformer+CRF tagger ([`tagger`]), majority-vote
//! ensembles ([`ensemble`]) and the speed/memory harness ([`bench`]).

pub mod align;
pub mod bench;
pub mod corpus;
pub mod embeddings;
pub mod ensemble;
pub mod error;
pub mod meta;
pub mod numerics;
pub mod presets;
pub mod synthetic;
pub mod tagger;

pub use error::{Error, Result};
