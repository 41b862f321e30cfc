//! Pretrained word/subword embedding tables.
//!
//! Tables load from the `.vec` text format (`count dim` header, then one
//! `token v1 … v_dim` row per line). Out-of-vocabulary tokens fall back to
//! the mean of hashed character n-gram bucket vectors when a bucket matrix
//! is attached, and to the zero vector otherwise.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Read, Write};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub const BUCKET_MAGIC: &[u8; 4] = b"MMXB";
pub const DEFAULT_NGRAM_RANGE: (usize, usize) = (3, 6);

/// Hashed character n-gram vectors (`count × dim`, row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct Buckets {
    count: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Buckets {
    pub fn new(count: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if count == 0 || dim == 0 || data.len() != count * dim {
            return Err(Error::Format(format!(
                "bucket matrix {count}x{dim} with {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite bucket value".into()));
        }
        Ok(Self { count, dim, data })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Binary sidecar: `MMXB`, u32 count, u32 dim, then `count × dim` f32, all little-endian.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BUCKET_MAGIC {
            return Err(Error::Format("bucket file: bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let count = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let dim = u32::from_le_bytes(word) as usize;
        let mut raw = vec![0u8; count * dim * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Self::new(count, dim, data)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BUCKET_MAGIC)?;
        w.write_all(&(self.count as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    vocab: HashMap<String, usize>,
    matrix: Vec<f64>,
    buckets: Option<Buckets>,
    ngram_range: (usize, usize),
    frozen: bool,
}

impl EmbeddingTable {
    /// Builds a table from `(token, vector)` rows. Duplicate tokens keep the last row.
    pub fn new(dim: usize, rows: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dim must be positive"));
        }
        let mut table = Self {
            dim,
            words: Vec::new(),
            vocab: HashMap::new(),
            matrix: Vec::new(),
            buckets: None,
            ngram_range: DEFAULT_NGRAM_RANGE,
            frozen: true,
        };
        for (word, vec) in rows {
            table.insert(word, &vec)?;
        }
        Ok(table)
    }

    fn insert(&mut self, word: String, vec: &[f64]) -> Result<()> {
        if vec.len() != self.dim {
            return Err(Error::invalid(format!(
                "row for {word:?} has {} values, expected {}",
                vec.len(),
                self.dim
            )));
        }
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value in row for {word:?}")));
        }
        match self.vocab.get(&word) {
            Some(&row) => {
                warn!("duplicate embedding token {word:?}; keeping the last occurrence");
                self.matrix[row * self.dim..(row + 1) * self.dim].copy_from_slice(vec);
            }
            None => {
                self.vocab.insert(word.clone(), self.words.len());
                self.words.push(word);
                self.matrix.extend_from_slice(vec);
            }
        }
        Ok(())
    }

    pub fn with_buckets(mut self, buckets: Buckets, ngram_range: (usize, usize)) -> Result<Self> {
        if buckets.dim != self.dim {
            return Err(Error::Format(format!(
                "bucket dim {} does not match table dim {}",
                buckets.dim, self.dim
            )));
        }
        if ngram_range.0 == 0 || ngram_range.0 > ngram_range.1 {
            return Err(Error::invalid(format!("bad n-gram range {ngram_range:?}")));
        }
        self.buckets = Some(buckets);
        self.ngram_range = ngram_range;
        Ok(self)
    }

    /// Reads the `.vec` text format.
    pub fn load_vec<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })??;
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (count, dim) = match fields.as_slice() {
            [c, d] => (
                c.parse::<usize>().map_err(|e| parse_err(1, format!("count: {e}")))?,
                d.parse::<usize>().map_err(|e| parse_err(1, format!("dim: {e}")))?,
            ),
            _ => return Err(parse_err(1, "header must be `count dim`".into())),
        };
        let mut table = Self::new(dim, std::iter::empty())?;
        let mut rows = 0usize;
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ').filter(|s| !s.is_empty());
            let word = parts.next().expect("non-empty line").to_string();
            let values: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>()
                        .map_err(|_| parse_err(lineno, format!("non-numeric value {p:?}")))
                })
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(parse_err(
                    lineno,
                    format!("expected {dim} values, found {}", values.len()),
                ));
            }
            table
                .insert(word, &values)
                .map_err(|e| parse_err(lineno, e.to_string()))?;
            rows += 1;
        }
        if rows != count {
            return Err(Error::Format(format!("header declares {count} rows, found {rows}")));
        }
        Ok(table)
    }

    /// Opens a `.vec` file; with `expect_buckets`, also reads the sidecar at
    /// [`EmbeddingTable::bucket_path`].
    pub fn open(path: &Path, expect_buckets: bool, ngram_range: (usize, usize)) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let table = Self::load_vec(std::io::BufReader::new(file))?;
        if !expect_buckets {
            return Ok(table);
        }
        let sidecar = Self::bucket_path(path);
        let buckets = Buckets::read_from(std::io::BufReader::new(std::fs::File::open(&sidecar)?))?;
        table.with_buckets(buckets, ngram_range)
    }

    pub fn bucket_path(vec_path: &Path) -> std::path::PathBuf {
        let mut p = vec_path.as_os_str().to_owned();
        p.push(".mmxb");
        p.into()
    }

    pub fn write_vec<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.words.len(), self.dim)?;
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}")?;
            for v in self.row(i) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn buckets(&self) -> Option<&Buckets> {
        self.buckets.as_ref()
    }

    pub fn ngram_range(&self) -> (usize, usize) {
        self.ngram_range
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Vector for `token`: the stored row, else the n-gram bucket mean, else zeros.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.lookup_into(token, &mut out);
        out
    }

    pub fn lookup_into(&self, token: &str, out: &mut [f64]) {
        if let Some(&row) = self.vocab.get(token) {
            out.copy_from_slice(self.row(row));
            return;
        }
        out.fill(0.0);
        let Some(buckets) = &self.buckets else { return };
        let ids = ngram_buckets(token, self.ngram_range, buckets.count);
        if ids.is_empty() {
            return;
        }
        for &b in &ids {
            for (o, v) in out.iter_mut().zip(buckets.row(b)) {
                *o += v;
            }
        }
        let n = ids.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }
}

/// Character n-grams of `<token>` for every `n` in the range, in order of
/// increasing `n` then start position.
pub fn char_ngrams(token: &str, (min_n, max_n): (usize, usize)) -> Vec<String> {
    let wrapped: Vec<char> = std::iter::once('<')
        .chain(token.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = Vec::new();
    for n in min_n..=max_n.min(wrapped.len()) {
        for start in 0..=wrapped.len() - n {
            out.push(wrapped[start..start + n].iter().collect());
        }
    }
    out
}

pub fn ngram_buckets(token: &str, range: (usize, usize), n_buckets: usize) -> Vec<usize> {
    char_ngrams(token, range)
        .iter()
        .map(|g| (fnv1a64(g.as_bytes()) % n_buckets as u64) as usize)
        .collect()
}

pub const UNK_UNIT: &str = "<unk>";

/// Subword inventory with greedy longest-match segmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct SubwordVocab {
    units: Vec<String>,
    set: HashSet<String>,
    max_unit_chars: usize,
    /// Prepended to every token before segmenting (e.g. `▁` for BPE-style
    /// vocabularies whose units mark word starts).
    start_marker: Option<char>,
}

impl SubwordVocab {
    /// Builds from explicit units plus a single-character fallback unit for
    /// every character in `seen_chars`.
    pub fn new(
        units: impl IntoIterator<Item = String>,
        seen_chars: impl IntoIterator<Item = char>,
    ) -> Result<Self> {
        let mut list: Vec<String> = Vec::new();
        let mut set = HashSet::new();
        for u in units
            .into_iter()
            .chain(seen_chars.into_iter().map(String::from))
        {
            if !u.is_empty() && u != UNK_UNIT && set.insert(u.clone()) {
                list.push(u);
            }
        }
        if list.is_empty() {
            return Err(Error::invalid("subword vocabulary is empty"));
        }
        let max_unit_chars = list.iter().map(|u| u.chars().count()).max().unwrap_or(1);
        Ok(Self {
            units: list,
            set,
            max_unit_chars,
            start_marker: None,
        })
    }

    pub fn with_start_marker(mut self, marker: char) -> Self {
        self.start_marker = Some(marker);
        self
    }

    pub fn start_marker(&self) -> Option<char> {
        self.start_marker
    }

    /// Units in insertion order (`<unk>` is implicit and not listed).
    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn contains(&self, unit: &str) -> bool {
        self.set.contains(unit)
    }

    pub fn segment(&self, token: &str) -> Vec<String> {
        let chars: Vec<char> = match self.start_marker {
            Some(m) => std::iter::once(m).chain(token.chars()).collect(),
            None => token.chars().collect(),
        };
        let mut out = Vec::new();
        let mut i = 0;
        let mut buf = String::new();
        while i < chars.len() {
            let longest = self.max_unit_chars.min(chars.len() - i);
            let mut taken = 0;
            for len in (1..=longest).rev() {
                buf.clear();
                buf.extend(&chars[i..i + len]);
                if self.set.contains(buf.as_str()) {
                    taken = len;
                    break;
                }
            }
            if taken == 0 {
                out.push(UNK_UNIT.to_string());
                i += 1;
            } else {
                out.push(buf.clone());
                i += taken;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(units: &[&str]) -> SubwordVocab {
        SubwordVocab::new(units.iter().map(|s| s.to_string()), std::iter::empty()).unwrap()
    }

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn load_simple_table() {
        let t = EmbeddingTable::load_vec("2 3\na 1 0 0\nb 0 1 0\n".as_bytes()).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
        assert_eq!(t.lookup("a"), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn load_accepts_trailing_space_and_crlf() {
        let t = EmbeddingTable::load_vec("1 2\r\nx 0.5 -1 \r\n".as_bytes()).unwrap();
        assert_eq!(t.lookup("x"), vec![0.5, -1.0]);
    }

    #[test]
    fn load_arity_error_names_line() {
        let err = EmbeddingTable::load_vec("2 3\na 1 0 0\nb 0 1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn load_non_numeric_error() {
        let err = EmbeddingTable::load_vec("1 2\na 1 x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn load_count_mismatch() {
        let err = EmbeddingTable::load_vec("1 3\na 1 0 0\nb 0 1 0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn duplicate_keeps_last() {
        let t = EmbeddingTable::load_vec("2 1\na 1\na 2\n".as_bytes()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.lookup("a"), vec![2.0]);
    }

    #[test]
    fn oov_without_buckets_is_zero() {
        let t = EmbeddingTable::load_vec("1 2\na 1 1\n".as_bytes()).unwrap();
        assert_eq!(t.lookup("zzz"), vec![0.0, 0.0]);
    }

    #[test]
    fn ngrams_of_short_token() {
        assert_eq!(char_ngrams("ab", (3, 3)), vec!["<ab", "ab>"]);
        assert_eq!(char_ngrams("ab", (3, 6)), vec!["<ab", "ab>", "<ab>"]);
        assert!(char_ngrams("a", (4, 6)).is_empty());
    }

    #[test]
    fn oov_backoff_hand_computed() {
        // FNV-1a 64 of "<ab" and "ab>" reduced mod 97, computed by hand from
        // the offset basis 0xcbf29ce484222325 and prime 0x100000001b3.
        let h1 = fnv1a64(b"<ab") % 97;
        let h2 = fnv1a64(b"ab>") % 97;
        assert_eq!((h1, h2), (EXPECTED_AB.0, EXPECTED_AB.1));
        let dim = 2;
        let data: Vec<f64> = (0..97 * dim).map(|i| i as f64).collect();
        let b = Buckets::new(97, dim, data).unwrap();
        let t = EmbeddingTable::new(dim, vec![("x".to_string(), vec![0.0, 0.0])])
            .unwrap()
            .with_buckets(b, (3, 3))
            .unwrap();
        let got = t.lookup("ab");
        let expect: Vec<f64> = (0..dim)
            .map(|c| ((h1 as usize * dim + c) as f64 + (h2 as usize * dim + c) as f64) / 2.0)
            .collect();
        assert_eq!(got, expect);
    }

    // fnv1a64("<ab") = 0x7011c61830176024, fnv1a64("ab>") = 0xe71fed190541d6bc
    const EXPECTED_AB: (u64, u64) = (59, 48);

    #[test]
    fn bucket_sidecar_round_trip() {
        let b = Buckets::new(3, 2, vec![0.5, -1.0, 2.0, 0.25, 0.0, 8.0]).unwrap();
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MMXB");
        assert_eq!(buf.len(), 12 + 6 * 4);
        assert_eq!(Buckets::read_from(buf.as_slice()).unwrap(), b);
    }

    #[test]
    fn segment_longest_match() {
        assert_eq!(vocab(&["ab", "c", "a", "b"]).segment("abc"), vec!["ab", "c"]);
        assert_eq!(vocab(&["a"]).segment("aa"), vec!["a", "a"]);
        assert_eq!(vocab(&["a"]).segment("xz"), vec![UNK_UNIT, UNK_UNIT]);
    }

    #[test]
    fn segment_with_marker() {
        let v = vocab(&["▁ab", "c"]).with_start_marker('▁');
        assert_eq!(v.segment("abc"), vec!["▁ab", "c"]);
    }

    proptest! {
        #[test]
        fn segment_concatenates_back(token in "[abcxyz]{1,12}") {
            let v = SubwordVocab::new(
                ["ab", "bc", "abc", "xy"].iter().map(|s| s.to_string()),
                "abc".chars(),
            ).unwrap();
            let units = v.segment(&token);
            prop_assert!(units.len() <= token.chars().count());
            // `<unk>` stands for exactly one unknown character
            let mut pos = 0;
            let chars: Vec<char> = token.chars().collect();
            for u in &units {
                if u == UNK_UNIT {
                    pos += 1;
                } else {
                    let n = u.chars().count();
                    let piece: String = chars[pos..pos + n].iter().collect();
                    prop_assert_eq!(&piece, u);
                    pos += n;
                }
            }
            prop_assert_eq!(pos, chars.len());
        }

        #[test]
        fn oov_norm_bounded_by_max_bucket_norm(token in "[a-z]{1,10}", seed in 0u64..1000) {
            let dim = 4;
            let data = crate::numerics::rng::normal(&[97, dim], 1.0, seed, 1).into_vec();
            let b = Buckets::new(97, dim, data).unwrap();
            let max_norm = (0..97)
                .map(|i| b.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            let t = EmbeddingTable::new(dim, std::iter::empty()).unwrap().with_buckets(b, (3, 6)).unwrap();
            let v = t.lookup(&token);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm <= max_norm + 1e-12);
            prop_assert_eq!(v, t.lookup(&token));
        }
    }
}
