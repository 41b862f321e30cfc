//! CoNLL-style labeled data, token normalization, dataset statistics and
//! scoring (span-level micro F1 for BIO NER, token accuracy for POS).
//!
//! File format: one `token<TAB>label` or `token<TAB>lang<TAB>label` row per
//! line, blank line between sentences, UTF-8, LF or CRLF.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    BioNer,
    Pos,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
    pub lang_ids: Option<Vec<String>>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, labels: Vec<String>, lang_ids: Option<Vec<String>>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::NoTokens);
        }
        if tokens.len() != labels.len() {
            return Err(Error::LengthMismatch(format!(
                "{} tokens, {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        if let Some(l) = &lang_ids {
            if l.len() != tokens.len() {
                return Err(Error::LengthMismatch(format!(
                    "{} tokens, {} language ids",
                    tokens.len(),
                    l.len()
                )));
            }
        }
        Ok(Self {
            tokens,
            labels,
            lang_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledDataset {
    sentences: Vec<Sentence>,
    scheme: Scheme,
    label_set: Vec<String>,
}

/// `O`, `B-TYPE` or `I-TYPE`.
pub fn is_bio_label(label: &str) -> bool {
    label == "O"
        || label
            .strip_prefix("B-")
            .or_else(|| label.strip_prefix("I-"))
            .is_some_and(|t| !t.is_empty())
}

impl LabeledDataset {
    /// Builds a dataset. With `scheme = None` the scheme is BIO NER when every
    /// label is BIO-shaped and at least one entity label occurs, else POS.
    pub fn new(sentences: Vec<Sentence>, scheme: Option<Scheme>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::NoSentences);
        }
        let mut seen = HashSet::new();
        let mut label_set = Vec::new();
        for l in sentences.iter().flat_map(|s| &s.labels) {
            if seen.insert(l.as_str()) {
                label_set.push(l.clone());
            }
        }
        let all_bio = label_set.iter().all(|l| is_bio_label(l));
        let scheme = match scheme {
            Some(Scheme::BioNer) if !all_bio => {
                let bad = label_set.iter().find(|l| !is_bio_label(l)).expect("non-BIO label");
                return Err(Error::invalid(format!("label {bad:?} is not a BIO label")));
            }
            Some(s) => s,
            None if all_bio && label_set.iter().any(|l| l != "O") => Scheme::BioNer,
            None => Scheme::Pos,
        };
        Ok(Self {
            sentences,
            scheme,
            label_set,
        })
    }

    pub fn with_scheme(self, scheme: Scheme) -> Result<Self> {
        Self::new(self.sentences, Some(scheme))
    }

    pub fn parse_conll<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader
            .read_to_string(&mut text)
            .map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
        Self::parse_conll_str(&text)
    }

    pub fn parse_conll_str(text: &str) -> Result<Self> {
        let mut sentences = Vec::new();
        let mut tokens = Vec::new();
        let mut labels = Vec::new();
        let mut langs: Vec<String> = Vec::new();
        let mut columns: Option<usize> = None;

        let mut flush = |tokens: &mut Vec<String>,
                         labels: &mut Vec<String>,
                         langs: &mut Vec<String>,
                         columns: &mut Option<usize>|
         -> Result<()> {
            if tokens.is_empty() {
                return Ok(());
            }
            let lang = (*columns == Some(3)).then(|| std::mem::take(langs));
            sentences.push(Sentence::new(std::mem::take(tokens), std::mem::take(labels), lang)?);
            langs.clear();
            *columns = None;
            Ok(())
        };

        for (i, raw) in text.split('\n').enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() {
                flush(&mut tokens, &mut labels, &mut langs, &mut columns)?;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let lineno = i + 1;
            if fields.len() != 2 && fields.len() != 3 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected 2 or 3 tab-separated columns, found {}", fields.len()),
                });
            }
            if *columns.get_or_insert(fields.len()) != fields.len() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "column count changes within a sentence".into(),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "empty column".into(),
                });
            }
            tokens.push(fields[0].to_string());
            labels.push(fields[fields.len() - 1].to_string());
            if fields.len() == 3 {
                langs.push(fields[1].to_string());
            }
        }
        flush(&mut tokens, &mut labels, &mut langs, &mut columns)?;
        Self::new(sentences, None)
    }

    pub fn write_conll<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.sentences {
            for i in 0..s.len() {
                match &s.lang_ids {
                    Some(l) => writeln!(w, "{}\t{}\t{}", s.tokens[i], l[i], s.labels[i])?,
                    None => writeln!(w, "{}\t{}", s.tokens[i], s.labels[i])?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_conll_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_conll(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Same dataset with [`normalize_token`] applied to every token.
    pub fn normalized(&self) -> Self {
        let sentences = self
            .sentences
            .iter()
            .map(|s| Sentence {
                tokens: s.tokens.iter().map(|t| normalize_token(t)).collect(),
                ..s.clone()
            })
            .collect();
        Self {
            sentences,
            ..self.clone()
        }
    }

    /// Replaces labels by `pred` (same shape), keeping tokens and language ids.
    pub fn relabeled(&self, pred: &[Vec<String>]) -> Result<Self> {
        check_shape(self, pred)?;
        let sentences = self
            .sentences
            .iter()
            .zip(pred)
            .map(|(s, p)| Sentence {
                labels: p.clone(),
                ..s.clone()
            })
            .collect();
        Self::new(sentences, None)
    }

    pub fn labels(&self) -> Vec<Vec<String>> {
        self.sentences.iter().map(|s| s.labels.clone()).collect()
    }
}

/// Emoji code point ranges used by [`normalize_token`]. Bump the version
/// whenever the table changes.
pub const EMOJI_TABLE_VERSION: &str = "mmx-emoji-1";
pub const EMOJI_RANGES: &[(u32, u32)] = &[
    (0x2600, 0x26FF),   // Miscellaneous Symbols
    (0x2700, 0x27BF),   // Dingbats
    (0x1F1E6, 0x1F1FF), // Regional Indicator Symbols
    (0x1F300, 0x1F5FF), // Miscellaneous Symbols and Pictographs
    (0x1F600, 0x1F64F), // Emoticons
    (0x1F680, 0x1F6FF), // Transport and Map Symbols
    (0x1F900, 0x1F9FF), // Supplemental Symbols and Pictographs
    (0x1FA70, 0x1FAFF), // Symbols and Pictographs Extended-A
];
/// Joiners and selectors allowed inside emoji sequences.
const EMOJI_GLUE: &[u32] = &[0x200D, 0xFE0F, 0x20E3];

fn is_emoji(c: char) -> bool {
    let c = c as u32;
    EMOJI_RANGES.iter().any(|&(lo, hi)| (lo..=hi).contains(&c))
}

pub const USR_TOKEN: &str = "<USR>";
pub const URL_TOKEN: &str = "<URL>";
pub const EMOJI_TOKEN: &str = "<EMOJI>";

/// Maps mentions and hashtags to `<USR>`, URLs to `<URL>` and pure emoji
/// tokens to `<EMOJI>`; everything else passes through.
pub fn normalize_token(token: &str) -> String {
    if token.starts_with('@') || token.starts_with('#') {
        return USR_TOKEN.to_string();
    }
    let lower = token.to_ascii_lowercase();
    if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.") {
        return URL_TOKEN.to_string();
    }
    if token.chars().any(is_emoji) && token.chars().all(|c| is_emoji(c) || EMOJI_GLUE.contains(&(c as u32))) {
        return EMOJI_TOKEN.to_string();
    }
    token.to_string()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LanguageTokenCounts {
    pub counts: BTreeMap<String, usize>,
    /// Matrix (majority) language.
    pub ml: String,
    /// Embedded language: the runner-up.
    pub el: String,
    /// Set when ML and EL have equal counts and the lexicographic rule decided.
    pub tie: bool,
}

pub fn dataset_stats(dataset: &LabeledDataset) -> Result<LanguageTokenCounts> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in dataset.sentences() {
        let ids = s.lang_ids.as_ref().ok_or(Error::MissingLangIds)?;
        for l in ids {
            *counts.entry(l.clone()).or_default() += 1;
        }
    }
    // BTreeMap iterates lexicographically; a stable sort by count keeps that order among ties.
    let mut ranked: Vec<(&String, &usize)> = counts.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(a.1));
    if ranked.len() < 2 {
        return Err(Error::invalid("need at least two language tags to assign ML and EL"));
    }
    let (ml, el) = (ranked[0].0.clone(), ranked[1].0.clone());
    let tie = ranked[0].1 == ranked[1].1;
    Ok(LanguageTokenCounts { counts, ml, el, tie })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub kind: String,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

/// Entity spans of a BIO sequence. An `I-T` that does not continue a `T`
/// span opens a new one.
pub fn bio_spans<S: AsRef<str>>(labels: &[S]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, label) in labels.iter().enumerate() {
        let label = label.as_ref();
        let (begin, kind) = if let Some(t) = label.strip_prefix("B-") {
            (true, Some(t))
        } else if let Some(t) = label.strip_prefix("I-") {
            (false, Some(t))
        } else {
            (false, None)
        };
        let continues = !begin && matches!((&open, kind), (Some((k, _)), Some(t)) if k == t);
        if continues {
            continue;
        }
        if let Some((k, s)) = open.take() {
            spans.push(Span { kind: k, start: s, end: i - 1 });
        }
        if let Some(t) = kind.filter(|t| !t.is_empty()) {
            open = Some((t.to_string(), i));
        }
    }
    if let Some((k, s)) = open {
        spans.push(Span {
            kind: k,
            start: s,
            end: labels.len() - 1,
        });
    }
    spans
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }

    /// `{"precision":…,"recall":…,"f1":…}` with six decimals.
    pub fn to_json(&self) -> String {
        format!(
            "{{\"precision\":{:.6},\"recall\":{:.6},\"f1\":{:.6}}}",
            self.precision, self.recall, self.f1
        )
    }
}

impl fmt::Display for Prf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json())
    }
}

fn check_shape(gold: &LabeledDataset, pred: &[Vec<String>]) -> Result<()> {
    if gold.sentences.len() != pred.len() {
        return Err(Error::LengthMismatch(format!(
            "{} gold sentences, {} predicted",
            gold.sentences.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.sentences.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::LengthMismatch(format!(
                "sentence {i}: {} gold labels, {} predicted",
                g.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

/// `(tp, fp, fn)` over exact-match spans.
pub fn span_counts<S: AsRef<str>, T: AsRef<str>>(gold: &[S], pred: &[T]) -> (usize, usize, usize) {
    let g: HashSet<Span> = bio_spans(gold).into_iter().collect();
    let p: HashSet<Span> = bio_spans(pred).into_iter().collect();
    let tp = p.intersection(&g).count();
    (tp, p.len() - tp, g.len() - tp)
}

pub fn span_micro_f1(gold: &LabeledDataset, pred: &[Vec<String>]) -> Result<Prf> {
    check_shape(gold, pred)?;
    if gold.scheme != Scheme::BioNer {
        return Err(Error::invalid("span F1 needs a BIO NER dataset"));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (g, p) in gold.sentences.iter().zip(pred) {
        let (a, b, c) = span_counts(&g.labels, p);
        tp += a;
        fp += b;
        fn_ += c;
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

pub fn token_accuracy(gold: &LabeledDataset, pred: &[Vec<String>]) -> Result<f64> {
    check_shape(gold, pred)?;
    let total = gold.num_tokens();
    if total == 0 {
        return Err(Error::NoTokens);
    }
    let correct = gold
        .sentences
        .iter()
        .zip(pred)
        .flat_map(|(g, p)| g.labels.iter().zip(p))
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / total as f64)
}

/// Task metric: span micro F1 for BIO NER, token accuracy for POS.
pub fn task_metric(gold: &LabeledDataset, pred: &[Vec<String>]) -> Result<f64> {
    match gold.scheme {
        Scheme::BioNer => Ok(span_micro_f1(gold, pred)?.f1),
        Scheme::Pos => token_accuracy(gold, pred),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn ner(labels: &[&[&str]]) -> LabeledDataset {
        let sents = labels
            .iter()
            .map(|l| Sentence::new(vec!["w".into(); l.len()], s(l), None).unwrap())
            .collect();
        LabeledDataset::new(sents, Some(Scheme::BioNer)).unwrap()
    }

    #[test]
    fn parse_two_columns() {
        let d = LabeledDataset::parse_conll_str("a\tO\nb\tB-PER\n\n").unwrap();
        assert_eq!(d.sentences().len(), 1);
        assert_eq!(d.sentences()[0].tokens, s(&["a", "b"]));
        assert_eq!(d.sentences()[0].labels, s(&["O", "B-PER"]));
        assert_eq!(d.scheme(), Scheme::BioNer);
        assert_eq!(d.label_set(), s(&["O", "B-PER"]).as_slice());
    }

    #[test]
    fn parse_empty_is_error() {
        assert!(matches!(LabeledDataset::parse_conll_str(""), Err(Error::NoSentences)));
        assert!(matches!(LabeledDataset::parse_conll_str("\n\n"), Err(Error::NoSentences)));
    }

    #[test]
    fn parse_wrong_columns_reports_line() {
        let err = LabeledDataset::parse_conll_str("a\tO\tX\tY\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = LabeledDataset::parse_conll_str("a\tO\n\nb\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn parse_three_columns_and_crlf() {
        let d = LabeledDataset::parse_conll_str("hola\tspa\tO\r\nyou\teng\tO\r\n\r\n\r\n").unwrap();
        let sent = &d.sentences()[0];
        assert_eq!(sent.lang_ids.as_ref().unwrap(), &s(&["spa", "eng"]));
        assert_eq!(d.scheme(), Scheme::Pos);
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_token("@john_doe"), "<USR>");
        assert_eq!(normalize_token("#tbt"), "<USR>");
        assert_eq!(normalize_token("https://t.co/x"), "<URL>");
        assert_eq!(normalize_token("www.example.com"), "<URL>");
        assert_eq!(normalize_token("😂😂"), "<EMOJI>");
        assert_eq!(normalize_token("👍🏽"), "<EMOJI>");
        assert_eq!(normalize_token("casa"), "casa");
        assert_eq!(normalize_token("ok😂"), "ok😂");
    }

    #[test]
    fn stats_majority_and_tie() {
        let sent = |langs: &[&str]| {
            Sentence::new(vec!["x".into(); langs.len()], vec!["O".into(); langs.len()], Some(s(langs))).unwrap()
        };
        let d = LabeledDataset::new(vec![sent(&["L1", "L1", "L2", "L1"])], None).unwrap();
        let st = dataset_stats(&d).unwrap();
        assert_eq!(st.counts, BTreeMap::from([("L1".into(), 3), ("L2".into(), 1)]));
        assert_eq!((st.ml.as_str(), st.el.as_str(), st.tie), ("L1", "L2", false));

        let d = LabeledDataset::new(vec![sent(&["L2", "L1", "L2", "L1"])], None).unwrap();
        let st = dataset_stats(&d).unwrap();
        assert_eq!((st.ml.as_str(), st.el.as_str(), st.tie), ("L1", "L2", true));
    }

    #[test]
    fn stats_without_lang_ids_fails() {
        let d = ner(&[&["O"]]);
        assert!(matches!(dataset_stats(&d), Err(Error::MissingLangIds)));
    }

    #[test]
    fn f1_partial_overlap() {
        // gold PER[0,0], LOC[2,3]; pred PER[0,0], LOC[2,2]
        let gold = ner(&[&["B-PER", "O", "B-LOC", "I-LOC"]]);
        let pred = vec![s(&["B-PER", "O", "B-LOC", "O"])];
        assert_eq!(span_counts(&gold.sentences()[0].labels, &pred[0]), (1, 1, 1));
        let prf = span_micro_f1(&gold, &pred).unwrap();
        assert!((prf.f1 - 0.5).abs() < 1e-15);
        assert_eq!(prf.to_json(), r#"{"precision":0.500000,"recall":0.500000,"f1":0.500000}"#);
    }

    #[test]
    fn f1_perfect_and_empty() {
        let gold = ner(&[&["B-PER", "I-PER", "O"], &["I-LOC"]]);
        assert_eq!(span_micro_f1(&gold, &gold.labels()).unwrap().f1, 1.0);
        let none = vec![s(&["O", "O", "O"]), s(&["O"])];
        assert_eq!(span_micro_f1(&gold, &none).unwrap().f1, 0.0);
    }

    #[test]
    fn orphan_inside_opens_span() {
        assert_eq!(
            bio_spans(&["O", "I-PER", "I-PER", "I-LOC", "B-LOC", "I-LOC"]),
            vec![
                Span { kind: "PER".into(), start: 1, end: 2 },
                Span { kind: "LOC".into(), start: 3, end: 3 },
                Span { kind: "LOC".into(), start: 4, end: 5 },
            ]
        );
    }

    #[test]
    fn accuracy_counts() {
        let gold = ner(&[&["O", "B-PER", "O", "O"]]);
        assert_eq!(token_accuracy(&gold, &gold.labels()).unwrap(), 1.0);
        let pred = vec![s(&["O", "O", "O", "O"])];
        assert_eq!(token_accuracy(&gold, &pred).unwrap(), 0.75);
        assert!(matches!(token_accuracy(&gold, &[s(&["O"])]), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(LabeledDataset::new(vec![], None), Err(Error::NoSentences)));
        assert!(matches!(Sentence::new(vec![], vec![], None), Err(Error::NoTokens)));
    }

    /// Independent span definition: every (start, end, type) triple where
    /// start opens a T-span, every later position is I-T and the span cannot
    /// be extended.
    fn brute_spans(labels: &[&str]) -> HashSet<Span> {
        let n = labels.len();
        let mut out = HashSet::new();
        for t in ["A", "B", "C"] {
            let b = format!("B-{t}");
            let i_t = format!("I-{t}");
            for start in 0..n {
                let opens = labels[start] == b
                    || (labels[start] == i_t && (start == 0 || (labels[start - 1] != b && labels[start - 1] != i_t)));
                if !opens {
                    continue;
                }
                for end in start..n {
                    let inner = labels[start + 1..=end].iter().all(|l| *l == i_t);
                    let closed = end + 1 == n || labels[end + 1] != i_t;
                    if inner && closed {
                        out.insert(Span { kind: t.into(), start, end });
                    }
                }
            }
        }
        out
    }

    #[test]
    fn spans_match_brute_force_exhaustively() {
        let alphabet = ["O", "B-A", "I-A", "B-B", "I-B", "B-C", "I-C"];
        for n in 1..=6usize {
            let total = alphabet.len().pow(n as u32);
            for code in 0..total {
                let mut c = code;
                let seq: Vec<&str> = (0..n)
                    .map(|_| {
                        let l = alphabet[c % alphabet.len()];
                        c /= alphabet.len();
                        l
                    })
                    .collect();
                let got: HashSet<Span> = bio_spans(&seq).into_iter().collect();
                assert_eq!(got, brute_spans(&seq), "{seq:?}");
            }
        }
    }

    fn arb_labels() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(
            prop::sample::select(vec!["O", "B-A", "I-A", "B-B", "I-B", "B-C", "I-C"]),
            1..7,
        )
        .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    fn arb_token() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-z]{1,6}",
            "[@#][a-z]{0,5}",
            "(http://|https://|www\\.)[a-z]{1,5}",
            prop::sample::select(vec!["😂", "👍🏽", "🇲🇽", "<USR>", "<URL>", "<EMOJI>"]).prop_map(String::from),
        ]
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(t in arb_token()) {
            let once = normalize_token(&t);
            prop_assert_eq!(normalize_token(&once), once);
        }

        #[test]
        fn conll_round_trip(
            sents in prop::collection::vec((arb_labels(), any::<bool>()), 1..5),
        ) {
            let sentences: Vec<Sentence> = sents
                .iter()
                .enumerate()
                .map(|(i, (labels, with_lang))| {
                    let n = labels.len();
                    let toks = (0..n).map(|k| format!("t{i}_{k}")).collect();
                    let langs = with_lang.then(|| (0..n).map(|k| if k % 2 == 0 { "lang1" } else { "lang2" }.to_string()).collect());
                    Sentence::new(toks, labels.clone(), langs).unwrap()
                })
                .collect();
            let d = LabeledDataset::new(sentences, None).unwrap();
            let back = LabeledDataset::parse_conll_str(&d.to_conll_string()).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn metrics_bounded_and_permutation_invariant(
            pairs in prop::collection::vec(arb_labels().prop_flat_map(|g| {
                let n = g.len();
                (Just(g), prop::collection::vec(prop::sample::select(vec!["O", "B-A", "I-A", "B-B", "I-B"]), n))
            }), 1..5),
        ) {
            let gold_sents: Vec<Sentence> = pairs
                .iter()
                .map(|(g, _)| Sentence::new(vec!["w".into(); g.len()], g.clone(), None).unwrap())
                .collect();
            let pred: Vec<Vec<String>> = pairs.iter().map(|(_, p)| p.iter().map(|x| x.to_string()).collect()).collect();
            let gold = LabeledDataset::new(gold_sents.clone(), Some(Scheme::BioNer)).unwrap();
            let prf = span_micro_f1(&gold, &pred).unwrap();
            for v in [prf.precision, prf.recall, prf.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let (tp, _, _) = pairs.iter().fold((0, 0, 0), |acc, (g, p)| {
                let c = span_counts(g, p);
                (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2)
            });
            if tp == 0 {
                prop_assert_eq!(prf.f1, 0.0);
            }
            let rev_gold = LabeledDataset::new(gold_sents.into_iter().rev().collect(), Some(Scheme::BioNer)).unwrap();
            let rev_pred: Vec<Vec<String>> = pred.iter().rev().cloned().collect();
            prop_assert_eq!(span_micro_f1(&rev_gold, &rev_pred).unwrap(), prf);
            let acc = token_accuracy(&gold, &pred).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
        }
    }
}
