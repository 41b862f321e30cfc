use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::TaggerModel;
use crate::corpus::{task_metric, LabeledDataset};
use crate::error::{Error, Result};
use crate::numerics::{rng, sgd_step, Gradients, Graph, Ops, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sentence CRF loss over the epoch.
    pub train_loss: f64,
    pub dev_metric: f64,
    pub steps: usize,
    /// Steps whose gradient was rescaled by norm clipping.
    pub clipped_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub best_dev: f64,
    pub epochs_run: usize,
}

fn encode_labels(model: &TaggerModel, data: &LabeledDataset, what: &str) -> Result<Vec<Vec<usize>>> {
    data.sentences()
        .iter()
        .map(|s| {
            s.labels
                .iter()
                .map(|l| {
                    model
                        .label_id(l)
                        .ok_or_else(|| Error::invalid(format!("{what} label {l:?} is not in the model label set")))
                })
                .collect()
        })
        .collect()
}

/// Minibatch SGD on mean CRF loss with dev-based early stopping. The model
/// ends up holding the parameters of the best dev epoch (earliest on ties).
pub fn train(model: &mut TaggerModel, train: &LabeledDataset, dev: &LabeledDataset) -> Result<TrainReport> {
    let gold = encode_labels(model, train, "training")?;
    encode_labels(model, dev, "dev")?;
    if gold.is_empty() {
        return Err(Error::NoSentences);
    }
    let tokens: Vec<Vec<String>> = train.sentences().iter().map(|s| model.prepare(&s.tokens)).collect();
    let dev_tokens: Vec<Vec<String>> = dev.sentences().iter().map(|s| s.tokens.clone()).collect();
    let cfg = model.config().clone();
    let mut order: Vec<usize> = (0..gold.len()).collect();
    let mut shuffler = rng::stream_rng(cfg.seed, rng::stream_id("train.shuffle"));

    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut history = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffler);
        let (mut loss_sum, mut steps, mut clipped) = (0.0, 0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::default();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut g = Graph::new();
                let l = model.loss(&mut g, &tokens[i], &gold[i])?;
                loss_sum += g.value(&l).item();
                let l = g.scale(&l, scale)?;
                grads.accumulate(g.backward(l)?);
            }
            if cfg.clip_norm > 0.0 && grads.clip_global_norm(cfg.clip_norm) {
                clipped += 1;
            }
            sgd_step(model.params_mut(), &grads, cfg.lr);
            steps += 1;
        }
        let pred = model.predict(&dev_tokens)?;
        let dev_metric = task_metric(dev, &pred)?;
        let train_loss = loss_sum / gold.len() as f64;
        log::info!("epoch {epoch}: loss {train_loss:.6} dev {dev_metric:.6} clipped {clipped}/{steps}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            dev_metric,
            steps,
            clipped_steps: clipped,
        });
        let improved = match &best {
            None => true,
            Some((b, _, _)) => dev_metric > *b,
        };
        if improved {
            best = Some((dev_metric, epoch, model.params().clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    let epochs_run = history.len();
    let (best_dev, best_epoch, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    model.set_history(history);
    Ok(TrainReport {
        best_epoch,
        best_dev,
        epochs_run,
    })
}
