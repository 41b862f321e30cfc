use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use mmx_core::align::{self, AlignmentJob};
use mmx_core::bench::{self, Format, SpeedOptions};
use mmx_core::corpus::{self, LabeledDataset, Scheme};
use mmx_core::embeddings::{EmbeddingTable, DEFAULT_NGRAM_RANGE};
use mmx_core::ensemble::{train_ensemble, Ensemble};
use mmx_core::presets::build_model;
use mmx_core::tagger::{train, TaggerModel};
use serde_json::json;

use crate::config::{ConfigError, RunConfig};
use crate::{BenchCommand, Command, Overrides};

#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 3,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn to_json(&self) -> String {
        let v = match self {
            Failure::Config(e) => json!({"error": "config", "pointer": e.pointer, "message": e.message}),
            Failure::Runtime(e) => json!({"error": "runtime", "message": format!("{e:#}")}),
        };
        v.to_string()
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<mmx_core::Error> for Failure {
    fn from(e: mmx_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Train {
            config,
            train,
            dev,
            out,
            overrides,
        } => cmd_train(&config, &train, &dev, &out, &overrides),
        Command::Eval { model, data } => cmd_eval(&model, &data),
        Command::Predict { model, input, out } => {
            let model = load_model(&model)?;
            let data = read_unlabeled(&input)?;
            let pred = model.predict(&tokens_of(&data))?;
            write_conll(&data.relabeled(&pred)?, &out)
        }
        Command::Align {
            src,
            tgt,
            iters,
            csls_k,
            dict_size_cap,
            seed_dict,
            out,
            mapped,
        } => cmd_align(&src, &tgt, iters, csls_k, dict_size_cap, seed_dict.as_deref(), &out, mapped.as_deref()),
        Command::EnsembleTrain {
            config,
            train,
            dev,
            out,
            k,
            jobs,
            overrides,
        } => cmd_ensemble_train(&config, &train, &dev, &out, k, jobs, &overrides),
        Command::EnsemblePredict { manifest, input, out } => {
            let ensemble = Ensemble::load(&manifest).with_context(|| format!("loading ensemble {}", manifest.display()))?;
            let data = read_unlabeled(&input)?;
            let pred = ensemble.predict(&tokens_of(&data))?;
            write_conll(&data.relabeled(&pred)?, &out)
        }
        Command::Bench(b) => cmd_bench(b),
        Command::Stats { data } => cmd_stats(&data),
    }
}

fn print_json(v: serde_json::Value) -> Outcome {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{v}")?;
    Ok(())
}

fn read_conll(path: &Path) -> anyhow::Result<LabeledDataset> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    LabeledDataset::parse_conll_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Like [`read_conll`], but a file of bare tokens (one per line) is accepted
/// too; its tokens get a placeholder `O` label.
fn read_unlabeled(path: &Path) -> anyhow::Result<LabeledDataset> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let padded: String = text
        .lines()
        .map(|l| {
            if l.trim().is_empty() || l.contains('\t') {
                format!("{l}\n")
            } else {
                format!("{l}\tO\n")
            }
        })
        .collect();
    LabeledDataset::parse_conll_str(&padded).with_context(|| format!("parsing {}", path.display()))
}

fn write_conll(data: &LabeledDataset, path: &Path) -> Outcome {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    data.write_conll(&mut w)?;
    w.flush()?;
    Ok(())
}

fn tokens_of(data: &LabeledDataset) -> Vec<Vec<String>> {
    data.sentences().iter().map(|s| s.tokens.clone()).collect()
}

fn load_model(path: &Path) -> anyhow::Result<TaggerModel> {
    TaggerModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

struct Prepared {
    cfg: RunConfig,
    train: LabeledDataset,
    dev: LabeledDataset,
    labels: Vec<String>,
    resources: mmx_core::presets::Resources,
}

fn prepare(config: &Path, train: &Path, dev: &Path, overrides: &Overrides) -> Result<Prepared, Failure> {
    let cfg = load_config(config, overrides)?;
    let scheme = cfg.task.scheme();
    let train = read_conll(train)?.with_scheme(scheme).context("training data")?;
    let dev = read_conll(dev)?.with_scheme(scheme).context("dev data")?;
    let mut labels = train.label_set().to_vec();
    for l in dev.label_set() {
        if !labels.contains(l) {
            labels.push(l.clone());
        }
    }
    let resources = cfg.load_resources()?;
    Ok(Prepared {
        cfg,
        train,
        dev,
        labels,
        resources,
    })
}

impl Prepared {
    fn build(&self, seed: u64) -> mmx_core::Result<TaggerModel> {
        let mut tc = self.cfg.tagger_config();
        tc.seed = seed;
        let vocab = self.train.sentences().iter().flat_map(|s| s.tokens.iter().map(String::as_str));
        build_model(&self.cfg.embedder, &tc, self.labels.clone(), self.cfg.task.scheme(), &self.resources, vocab)
    }
}

fn cmd_train(config: &Path, train_path: &Path, dev_path: &Path, out: &Path, overrides: &Overrides) -> Outcome {
    let p = prepare(config, train_path, dev_path, overrides)?;
    let mut model = p.build(p.cfg.tagger_config().seed)?;
    let report = train(&mut model, &p.train, &p.dev)?;
    model.save(out).with_context(|| format!("writing {}", out.display()))?;
    let count = model.count_params();
    print_json(json!({
        "model": out,
        "mode": p.cfg.embedder.mode,
        "best_dev": report.best_dev,
        "best_epoch": report.best_epoch,
        "epochs_run": report.epochs_run,
        "trainable_params": count.trainable,
        "frozen_params": count.frozen,
    }))
}

fn cmd_eval(model: &Path, data: &Path) -> Outcome {
    let model = load_model(model)?;
    let gold = read_conll(data)?.with_scheme(model.scheme())?;
    let pred = model.predict(&tokens_of(&gold))?;
    let line = match model.scheme() {
        Scheme::BioNer => corpus::span_micro_f1(&gold, &pred)?.to_json(),
        Scheme::Pos => format!("{{\"accuracy\":{:.6}}}", corpus::token_accuracy(&gold, &pred)?),
    };
    writeln!(std::io::stdout().lock(), "{line}")?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_align(
    src: &Path,
    tgt: &Path,
    iters: usize,
    csls_k: usize,
    dict_size_cap: usize,
    seed_dict: Option<&Path>,
    out: &Path,
    mapped: Option<&Path>,
) -> Outcome {
    let open = |p: &Path| {
        EmbeddingTable::open(p, false, DEFAULT_NGRAM_RANGE).with_context(|| format!("loading {}", p.display()))
    };
    let (src_t, tgt_t) = (open(src)?, open(tgt)?);
    let seeds = match seed_dict {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            align::parse_seed_pairs(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => align::identical_string_seeds(&src_t, &tgt_t),
    };
    let n_seeds = seeds.len();
    let mut job = AlignmentJob::new(&src_t, &tgt_t, seeds);
    job.iterations = iters;
    job.csls_k = csls_k;
    job.dict_size_cap = dict_size_cap;
    let r = align::refine(&job)?;
    let mut w = BufWriter::new(fs::File::create(out).with_context(|| format!("creating {}", out.display()))?);
    align::write_w(&mut w, &r.w, r.dim)?;
    w.flush()?;
    if let Some(p) = mapped {
        let mut w = BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?);
        align::map_table(&src_t, &r.w)?.write_vec(&mut w)?;
        w.flush()?;
    }
    print_json(json!({
        "dim": r.dim,
        "seed_pairs": n_seeds,
        "induced_pairs": r.induced_dict.len(),
        "objective_trace": r.objective_trace,
        "stopped_early": r.stopped_early,
        "orthogonality_error": align::orthogonality_error(&r.w, r.dim),
    }))
}

fn cmd_ensemble_train(
    config: &Path,
    train_path: &Path,
    dev_path: &Path,
    out: &Path,
    k: usize,
    jobs: usize,
    overrides: &Overrides,
) -> Outcome {
    if k == 0 {
        return Err(anyhow::anyhow!("--k must be at least 1").into());
    }
    let prefix = out
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| anyhow::anyhow!("--out needs a file name prefix"))?
        .to_string();
    let dir = match out.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let p = prepare(config, train_path, dev_path, overrides)?;
    let base = p.cfg.tagger_config().seed;
    let (ensemble, reports) = train_ensemble(|s| p.build(s), k, base, jobs, &p.train, &p.dev)?;
    let manifest = ensemble.save(&dir, &prefix)?;
    let members: Vec<_> = ensemble
        .seeds()
        .iter()
        .zip(&reports)
        .map(|(s, r)| json!({"seed": s, "best_dev": r.best_dev, "best_epoch": r.best_epoch}))
        .collect();
    print_json(json!({"manifest": manifest, "members": members}))
}

fn model_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

fn cmd_bench(cmd: BenchCommand) -> Outcome {
    match cmd {
        BenchCommand::Speed {
            model,
            lengths,
            runs,
            warmup,
            seed,
            out,
        } => {
            let format = Format::for_path(&out)?;
            let opts = SpeedOptions { runs, warmup, seed };
            let mut reports = Vec::new();
            for path in &model {
                let m = load_model(path)?;
                log::info!("timing {}", path.display());
                reports.push(bench::measure_speed(&model_name(path), &m, &lengths, opts)?);
            }
            bench::emit_report(&reports, format, &out)?;
            let summary: Vec<_> = reports
                .iter()
                .map(|r| json!({"model": r.model, "unit": r.unit, "rows": r.rows.len(), "skipped": r.skipped}))
                .collect();
            print_json(json!({"out": out, "reports": summary}))
        }
        BenchCommand::Memory {
            model,
            length,
            seed,
            out,
        } => {
            let mut reports = Vec::new();
            for path in &model {
                let m = load_model(path)?;
                reports.push(bench::measure_memory(&model_name(path), &m, length, seed)?);
            }
            bench::emit_memory(&reports, &out)?;
            let summary: Vec<_> = reports
                .iter()
                .map(|r| json!({"model": r.model, "length": r.length, "activation_bytes": r.activation_bytes}))
                .collect();
            print_json(json!({"out": out, "reports": summary}))
        }
    }
}

fn cmd_stats(path: &Path) -> Outcome {
    let data = read_conll(path)?;
    let s = corpus::dataset_stats(&data)?;
    print_json(json!({
        "sentences": data.sentences().len(),
        "tokens": data.num_tokens(),
        "labels": data.label_set().len(),
        "scheme": data.scheme(),
        "lang_counts": s.counts,
        "ml": s.ml,
        "el": s.el,
        "ml_tokens": s.counts[&s.ml],
        "el_tokens": s.counts[&s.el],
        "tie": s.tie,
    }))
}
