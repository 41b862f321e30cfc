//! Helpers shared by the integration tests. Each test binary uses a subset.
#![allow(dead_code)]

use std::collections::HashSet;

use mmx_core::embeddings::SubwordVocab;
use mmx_core::meta::{Combine, MetaOptions, Scorer};
use mmx_core::tagger::{EmbedderSpec, TaggerModel};

/// Buffer elements of a word-level combiner over `n` rows.
fn meta_elems(n: usize, dims: &[usize], o: &MetaOptions) -> usize {
    let s = dims.len();
    let lookups: usize = dims.iter().map(|d| n * d).sum();
    let dp = o.d_prime;
    let rest = match o.mode {
        Combine::Concat if s == 1 => 0,
        Combine::Concat => lookups,
        Combine::Linear => s * n * dp + (s - 1) * n * dp,
        Combine::Attention => {
            let proj = s * n * dp;
            let scored = if o.scorer == Scorer::Identity { 0 } else { s * n * dp };
            let score_w = if o.scalar_attention { 1 } else { dp };
            let scalar = if o.scalar_attention { s * n } else { 0 };
            let stacked_scores = s * n * score_w;
            let softmax = stacked_scores;
            let stacked = s * n * dp;
            let weighted = s * n * dp;
            let summed = n * dp;
            proj + scored + scalar + stacked_scores + softmax + stacked + weighted + summed
        }
    };
    lookups + rest
}

fn meta_out(dims: &[usize], o: &MetaOptions) -> usize {
    match o.mode {
        Combine::Concat => dims.iter().sum(),
        _ => o.d_prime,
    }
}

fn vocab(units: &[String], marker: Option<char>) -> SubwordVocab {
    let v = SubwordVocab::new(units.iter().cloned(), std::iter::empty()).unwrap();
    match marker {
        Some(m) => v.with_start_marker(m),
        None => v,
    }
}

/// Total buffer elements materialized by one emission pass over
/// already-prepared `tokens`, derived from layer shapes alone.
pub fn activation_elems(model: &TaggerModel, tokens: &[String]) -> usize {
    let n = tokens.len();
    let dims: Vec<usize> = model.embedder().tables().iter().map(|t| t.dim()).collect();
    let (embed, m, gathered) = match model.embedder().spec() {
        EmbedderSpec::Meta { sources, options } => {
            let d: Vec<usize> = sources.iter().map(|&i| dims[i]).collect();
            (meta_elems(n, &d, &options), n, false)
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
            let dw: Vec<usize> = word_sources.iter().map(|&i| dims[i]).collect();
            let ds: Vec<usize> = subword_sources.iter().map(|&i| dims[i]).collect();
            let v = vocab(&units, start_marker);
            let distinct: HashSet<String> = tokens.iter().flat_map(|t| v.segment(t)).collect();
            let u = distinct.len();
            let word = meta_elems(n, &dw, &word_options);
            let sub = meta_elems(u, &ds, &subword_options) + n * u + n * meta_out(&ds, &subword_options);
            let total_chars: usize = tokens.iter().map(|t| t.chars().count()).sum();
            let a = alphabet.chars().count();
            let (cd, w, co) = (chars.char_dim, chars.width, chars.out_dim);
            let char_elems = cd                       // zero pad row
                + (a + 2) * cd                         // table with pad row
                + total_chars * w * cd * 2             // gather, reshape
                + total_chars * co * 2                 // conv matmul, bias
                + total_chars * co                     // per-token slices
                + n * co * 2; // max pools, stack
            let out = meta_out(&dw, &word_options) + meta_out(&ds, &subword_options) + co;
            (word + sub + char_elems + n * out, n, false)
        }
        EmbedderSpec::Scratch {
            units,
            start_marker,
            dim,
        } => {
            let v = vocab(&units, start_marker);
            let m: usize = tokens.iter().map(|t| v.segment(t).len()).sum();
            (m * dim, m, true)
        }
    };
    let c = model.config();
    let (h, f, heads, l) = (c.hidden, c.ff_dim, c.heads, model.labels().len());
    let dh = h / heads;
    let input = 2 * m * h + m * h + m * h;
    let norm = 3 * m * h;
    let per_head = 3 * m * dh + m * dh + 3 * m * m + m * dh;
    let concat = if heads > 1 { m * h } else { 0 };
    let layer = norm + 2 * 2 * m * h + m * h + heads * per_head + concat + 2 * m * h + m * h // attention
        + norm + 2 * m * f + m * f + 2 * m * h + m * h; // feed-forward
    let encoder = input + c.layers * layer + norm;
    let first = if gathered { n * h } else { 0 };
    embed + encoder + first + 2 * n * l
}
