//! Trains every pipeline on the generated code-switched corpus and prints
//! the dev curve and wall time. Optional args: seed, patience, batch size, lr.

use std::time::Instant;

use mmx_core::presets::{build_model, Mode};
use mmx_core::synthetic::{self, toy, SyntheticSpec};
use mmx_core::tagger::train;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> mmx_core::Result<()> {
    let seed: u64 = arg(1, 1);
    let corpus = synthetic::generate(&SyntheticSpec::default())?;
    let tables = synthetic::tables(&corpus, toy::TABLE_DIM, 7)?;
    let mut config = toy::config(seed);
    config.early_stop_patience = arg(2, config.early_stop_patience);
    config.batch_size = arg(3, config.batch_size);
    config.lr = arg(4, config.lr);
    for mode in Mode::ALL {
        let start = Instant::now();
        let mut model = build_model(
            &toy::recipe(mode),
            &config,
            corpus.train.label_set().to_vec(),
            corpus.train.scheme(),
            &toy::resources(mode, &tables),
            corpus.train.sentences().iter().flat_map(|s| s.tokens.iter().map(String::as_str)),
        )?;
        let report = train(&mut model, &corpus.train, &corpus.dev)?;
        let curve: Vec<String> = model.history().iter().map(|h| format!("{:.3}", h.dev_metric)).collect();
        println!(
            "{mode:14} best {:.4} at epoch {:2}/{:2} in {:6.1}s  [{}]",
            report.best_dev,
            report.best_epoch,
            report.epochs_run,
            start.elapsed().as_secs_f64(),
            curve.join(" ")
        );
    }
    Ok(())
}
