//! Inference speed over a sequence-length grid and forward-pass memory
//! accounting, with CSV/JSON/SVG reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Scheme;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::meta::CharOptions;
use crate::numerics::{rng, Eval};
use crate::presets::{build_model, Mode, Recipe, Resources};
use crate::tagger::{viterbi, Embedder, TaggerConfig, TaggerModel};

pub const DEFAULT_GRID: [usize; 9] = [16, 32, 64, 128, 256, 512, 1024, 2048, 4096];
pub const DEFAULT_RUNS: usize = 100;
pub const DEFAULT_WARMUP: usize = 10;
/// Bumped whenever the CSV columns change.
pub const CSV_VERSION: u32 = 1;
pub const CSV_COLUMNS: [&str; 10] = [
    "model",
    "length",
    "unit",
    "runs",
    "mean_ms",
    "median_ms",
    "std_ms",
    "min_ms",
    "max_ms",
    "throughput",
];
/// Bytes charged per buffer element.
pub const BYTES_PER_ELEM: u64 = 4;

/// Seeded pseudorandom ids in `0..vocab_size`.
pub fn gen_dummy(length: usize, vocab_size: usize, seed: u64) -> Result<Vec<usize>> {
    if length == 0 {
        return Err(Error::invalid("dummy sequence length must be at least 1"));
    }
    if vocab_size == 0 {
        return Err(Error::invalid("dummy vocabulary is empty"));
    }
    let mut r = rng::stream_rng(seed, rng::stream_id("bench.dummy"));
    Ok((0..length).map(|_| r.random_range(0..vocab_size)).collect())
}

/// Lowercase word for an id; ids map to distinct words of at least three letters.
pub fn dummy_word(id: usize) -> String {
    let mut n = id;
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (n % 26) as u8);
        n /= 26;
        if n == 0 && s.len() >= 3 {
            break;
        }
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthUnit {
    Words,
    Subwords,
}

impl LengthUnit {
    pub fn of(model: &TaggerModel) -> Self {
        if model.embedder().is_subword_level() {
            LengthUnit::Subwords
        } else {
            LengthUnit::Words
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LengthUnit::Words => "words",
            LengthUnit::Subwords => "subwords",
        }
    }
}

/// Tokens whose encoder length is exactly `length`, counted in the model's
/// length unit. Subword models get tokens that each segment to one unit.
pub fn dummy_tokens(model: &TaggerModel, length: usize, seed: u64) -> Result<Vec<String>> {
    let emb = model.embedder();
    let pool: Vec<String> = match emb {
        Embedder::Scratch(s) => s
            .vocab()
            .units()
            .iter()
            .filter(|u| emb.encoder_length(&[u.as_str()]) == 1)
            .cloned()
            .collect(),
        _ => match emb.tables().first() {
            Some(t) if !t.is_empty() => t.words().to_vec(),
            _ => (0..1000).map(dummy_word).collect(),
        },
    };
    if pool.is_empty() {
        return Err(Error::invalid("model has no single-unit tokens to build dummy input from"));
    }
    Ok(gen_dummy(length, pool.len(), seed)?.into_iter().map(|i| pool[i].clone()).collect())
}

/// One timed forward pass: embedding, encoder, emissions and Viterbi on
/// already prepared tokens.
pub fn forward(model: &TaggerModel, tokens: &[String]) -> Result<Vec<usize>> {
    let e = model.emissions_with(&mut Eval::new(), tokens)?;
    Ok(viterbi(&e, model.transitions())?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub length: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Sequences per second at batch size 1.
    pub throughput: f64,
}

impl Timing {
    pub fn from_samples(length: usize, samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("no timing samples"));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        };
        let std = if samples.len() > 1 {
            (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        // Summation rounding can push the mean a hair outside the sample range.
        let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
        let mean = mean.clamp(min, max);
        Ok(Self {
            length,
            mean_ms: mean,
            median_ms: median,
            std_ms: std,
            min_ms: min,
            max_ms: max,
            throughput: 1000.0 / mean,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub model: String,
    pub unit: LengthUnit,
    pub runs: usize,
    pub warmup: usize,
    pub rows: Vec<Timing>,
    /// Grid points beyond the model's maximum length.
    pub skipped: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct SpeedOptions {
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for SpeedOptions {
    fn default() -> Self {
        Self {
            runs: DEFAULT_RUNS,
            warmup: DEFAULT_WARMUP,
            seed: 0,
        }
    }
}

pub fn measure_speed(name: &str, model: &TaggerModel, grid: &[usize], opts: SpeedOptions) -> Result<SpeedReport> {
    if opts.runs == 0 {
        return Err(Error::invalid("runs must be at least 1"));
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &length in grid {
        if length > model.config().max_len {
            log::info!("{name}: length {length} over maximum {}, skipped", model.config().max_len);
            skipped.push(length);
            continue;
        }
        let tokens = model.prepare(&dummy_tokens(model, length, opts.seed)?);
        for _ in 0..opts.warmup {
            forward(model, &tokens)?;
        }
        let mut samples = Vec::with_capacity(opts.runs);
        for _ in 0..opts.runs {
            let t = Instant::now();
            let path = forward(model, &tokens)?;
            samples.push(t.elapsed().as_secs_f64() * 1000.0);
            std::hint::black_box(path);
        }
        let row = Timing::from_samples(length, &samples)?;
        log::debug!("{name}: length {length} mean {:.3} ms", row.mean_ms);
        rows.push(row);
    }
    Ok(SpeedReport {
        model: name.to_string(),
        unit: LengthUnit::of(model),
        runs: opts.runs,
        warmup: opts.warmup,
        rows,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub model: String,
    pub length: usize,
    pub unit: LengthUnit,
    pub param_bytes: u64,
    /// Every op output and input constant of one forward pass, treated as
    /// live until the pass ends.
    pub activation_bytes: u64,
    pub largest_buffer_bytes: u64,
    pub buffers: usize,
    pub by_scope: BTreeMap<String, u64>,
    /// Process resident set size after the pass, where the platform exposes it.
    pub rss_bytes: Option<u64>,
}

pub fn measure_memory(name: &str, model: &TaggerModel, length: usize, seed: u64) -> Result<MemoryReport> {
    let tokens = model.prepare(&dummy_tokens(model, length, seed)?);
    let mut ops = Eval::tracking();
    model.emissions_with(&mut ops, &tokens)?;
    let stats = ops.into_stats().expect("tracking backend");
    Ok(MemoryReport {
        model: name.to_string(),
        length,
        unit: LengthUnit::of(model),
        param_bytes: model.count_params().bytes_32bit as u64,
        activation_bytes: stats.total_elems as u64 * BYTES_PER_ELEM,
        largest_buffer_bytes: stats.largest_elems as u64 * BYTES_PER_ELEM,
        buffers: stats.buffers,
        by_scope: stats
            .by_scope
            .into_iter()
            .map(|(k, v)| (k, v as u64 * BYTES_PER_ELEM))
            .collect(),
        rss_bytes: rss_bytes(),
    })
}

fn rss_bytes() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            _ => Err(Error::invalid(format!("unknown report format {s:?}"))),
        }
    }
}

impl Format {
    /// Picks the format from a file extension.
    pub fn for_path(path: &Path) -> Result<Self> {
        path.extension()
            .and_then(|e| e.to_str())
            .ok_or_else(|| Error::invalid(format!("cannot infer report format of {}", path.display())))?
            .parse()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub model: String,
    pub length: usize,
    pub unit: LengthUnit,
    pub runs: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub throughput: f64,
}

pub fn csv_rows(reports: &[SpeedReport]) -> Vec<CsvRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.rows.iter().map(|t| CsvRow {
                model: r.model.clone(),
                length: t.length,
                unit: r.unit,
                runs: r.runs,
                mean_ms: t.mean_ms,
                median_ms: t.median_ms,
                std_ms: t.std_ms,
                min_ms: t.min_ms,
                max_ms: t.max_ms,
                throughput: t.throughput,
            })
        })
        .collect()
}

pub fn render_csv(reports: &[SpeedReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in csv_rows(reports) {
        w.serialize(row)?;
    }
    if reports.iter().all(|r| r.rows.is_empty()) {
        w.write_record(CSV_COLUMNS)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn render_json(reports: &[SpeedReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "csv_version": CSV_VERSION,
        "reports": reports,
    }))?)
}

/// Throughput against length, one polyline per model, log-scaled x axis.
pub fn render_svg(reports: &[SpeedReport]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
    let cells: Vec<&Timing> = reports.iter().flat_map(|r| &r.rows).collect();
    let lx = |l: usize| (l.max(1) as f64).log2();
    let (x0, x1) = cells
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(lx(t.length)), b.max(lx(t.length))));
    let y1 = cells.iter().map(|t| t.throughput).fold(0.0, f64::max);
    let sx = |l: usize| {
        let span = if x1 > x0 { x1 - x0 } else { 1.0 };
        PAD + (lx(l) - x0) / span * (W - 2.0 * PAD)
    };
    let sy = |v: f64| H - PAD - if y1 > 0.0 { v / y1 } else { 0.0 } * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">sequence length (log scale)</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">sequences / s</text>"#, H / 2.0, H / 2.0);
    for (i, r) in reports.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = r
            .rows
            .iter()
            .map(|t| format!("{:.2},{:.2}", sx(t.length), sy(t.throughput)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-model="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(&r.model),
            points.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 16.0 * i as f64,
            escape(&r.model)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn emit_report(reports: &[SpeedReport], format: Format, path: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to emit"));
    }
    let text = match format {
        Format::Csv => render_csv(reports)?,
        Format::Json => render_json(reports)?,
        Format::Svg => render_svg(reports),
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn emit_memory(reports: &[MemoryReport], path: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to emit"));
    }
    fs::write(path, serde_json::to_string_pretty(reports)?)?;
    Ok(())
}

/// Full-size reference taggers for the efficiency study, with random
/// frozen tables standing in for pretrained vectors.
pub mod reference {
    use super::*;

    pub const WORD_DIM: usize = 300;
    pub const VOCAB: usize = 2000;
    pub const LABELS: usize = 9;

    fn table(words: &[String], dim: usize, seed: u64, stream: &str) -> Arc<EmbeddingTable> {
        let m = rng::uniform(&[words.len(), dim], 1.0, seed, rng::stream_id(stream));
        Arc::new(
            EmbeddingTable::new(dim, words.iter().enumerate().map(|(i, w)| (w.clone(), m.row(i).to_vec())))
                .expect("valid table"),
        )
    }

    pub fn vocabulary() -> Vec<String> {
        (0..VOCAB).map(dummy_word).collect()
    }

    /// One- and two-letter units.
    pub fn subword_units() -> Vec<String> {
        let letters: Vec<char> = ('a'..='z').collect();
        let mut units: Vec<String> = letters.iter().map(|c| c.to_string()).collect();
        for a in &letters {
            for b in &letters {
                units.push(format!("{a}{b}"));
            }
        }
        units
    }

    fn labels() -> Vec<String> {
        (0..LABELS).map(|i| format!("T{i}")).collect()
    }

    fn model(mode: Mode, recipe: Recipe, config: TaggerConfig, seed: u64) -> Result<TaggerModel> {
        let words = vocabulary();
        let units = subword_units();
        let resources = match mode {
            Mode::WordSingle => Resources {
                word_tables: vec![table(&words, WORD_DIM, seed, "ref.word0")],
                subword_tables: vec![],
                ..Default::default()
            },
            Mode::Hme => Resources {
                word_tables: vec![table(&words, WORD_DIM, seed, "ref.word0"), table(&words, WORD_DIM, seed, "ref.word1")],
                subword_tables: vec![table(&units, WORD_DIM, seed, "ref.sub0"), table(&units, WORD_DIM, seed, "ref.sub1")],
                ..Default::default()
            },
            _ => Resources::default(),
        };
        build_model(
            &Recipe { mode, ..recipe },
            &TaggerConfig { seed, ..config },
            labels(),
            Scheme::Pos,
            &resources,
            words.iter().map(String::as_str),
        )
    }

    /// Single frozen 300-d word table under the default tagger.
    pub fn word_single(seed: u64) -> Result<TaggerModel> {
        model(Mode::WordSingle, Recipe::default(), TaggerConfig::default(), seed)
    }

    /// Two word and two subword 300-d tables, attention combiners, char CNN.
    pub fn hme(seed: u64) -> Result<TaggerModel> {
        let recipe = Recipe {
            chars: CharOptions::default(),
            ..Recipe::default()
        };
        model(Mode::Hme, recipe, TaggerConfig::default(), seed)
    }

    /// Four-layer scratch transformer, 768 wide with 12 heads.
    pub fn scratch_768(seed: u64) -> Result<TaggerModel> {
        let config = TaggerConfig {
            hidden: 768,
            ff_dim: 3072,
            heads: 12,
            layers: 4,
            lr: 1e-4,
            ..TaggerConfig::default()
        };
        model(Mode::Scratch, Recipe::default(), config, seed)
    }

    pub fn all(seed: u64) -> Result<Vec<(&'static str, TaggerModel)>> {
        Ok(vec![
            ("word-single", word_single(seed)?),
            ("hme", hme(seed)?),
            ("scratch-768", scratch_768(seed)?),
        ])
    }
}
