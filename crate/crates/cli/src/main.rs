//! `mmx`: train, evaluate and benchmark code-switching taggers.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 config
//! schema violation (reported with a JSON pointer).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmx_core::presets::Mode;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\ntarget: ",
    env!("MMX_BUILD_TARGET"),
    "\nprofile: ",
    env!("MMX_BUILD_PROFILE"),
    "\nrustc: ",
    env!("MMX_BUILD_RUSTC"),
    "\nformats: model MMX1, alignment MMXW, ensemble manifest 1, bench csv 1",
);

#[derive(Debug, Parser)]
#[command(name = "mmx", version, long_version = LONG_VERSION, about = "Code-switching sequence tagging with meta-embeddings")]
struct Cli {
    /// Log filter (error, warn, info, debug, trace, or env_logger syntax).
    #[arg(long, global = true, env = "MMX_LOG", default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

/// Flags that override the `tagger` and `seed` sections of a run config.
#[derive(Debug, Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    /// Embedder pipeline (word-single, mme-concat, mme-linear, mme-attention, hme, scratch).
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// One attention weight per source instead of one per dimension.
    #[arg(long)]
    scalar_attention: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one tagger and write it as a model file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a model on a labeled CoNLL file; prints the metric as JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Tag a CoNLL file (labels, if any, are replaced).
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an orthogonal map from a source to a target embedding space.
    Align {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long, default_value_t = 5)]
        iters: usize,
        #[arg(long, default_value_t = 10)]
        csls_k: usize,
        #[arg(long, default_value_t = 10_000)]
        dict_size_cap: usize,
        /// Tab-separated seed pairs; identical strings are used when absent.
        #[arg(long)]
        seed_dict: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the mapped source table as a `.vec` file.
        #[arg(long)]
        mapped: Option<PathBuf>,
    },
    /// Train K members with seeds seed, seed+1, … and write them with a manifest.
    EnsembleTrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// Output prefix: writes PREFIX.{k}.mmx and PREFIX.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = mmx_core::ensemble::DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Tag a CoNLL file by majority vote of an ensemble.
    EnsemblePredict {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Speed and memory measurements.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Per-language token counts of a CoNLL file with language ids, as JSON.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Time forward passes over a grid of dummy input lengths.
    Speed {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = mmx_core::bench::DEFAULT_GRID)]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = mmx_core::bench::DEFAULT_RUNS)]
        runs: usize,
        #[arg(long, default_value_t = mmx_core::bench::DEFAULT_WARMUP)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report file; the extension picks csv, json or svg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Count activation buffers of one forward pass.
    Memory {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long, default_value_t = 512)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code())
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: mmx_core::Error| e.to_string())
}

impl Overrides {
    fn apply(&self, cfg: &mut config::RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        let t = &mut cfg.tagger;
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut t.max_epochs, self.epochs);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.early_stop_patience, self.patience);
        set(&mut t.layers, self.layers);
        set(&mut t.heads, self.heads);
        set(&mut t.hidden, self.hidden);
        set(&mut t.ff_dim, self.ff_dim);
        if let Some(lr) = self.lr {
            t.lr = lr;
        }
        if let Some(m) = self.mode {
            cfg.embedder.mode = m;
        }
        if self.scalar_attention {
            cfg.embedder.scalar_attention = true;
        }
    }
}
