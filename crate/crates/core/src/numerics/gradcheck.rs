use rand::seq::index::sample;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use super::rng::stream_rng;
use super::Ops;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(param name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares reverse-mode gradients against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` on up to `max_coords` randomly sampled trainable
/// coordinates. Relative error is `|a − n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(params: &ParamStore, loss: F, eps: f64, max_coords: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let out = loss(&mut g, params)?;
    let grads = g.backward(out)?;

    let coords: Vec<(ParamId, usize)> = params
        .trainable_ids()
        .into_iter()
        .flat_map(|id| (0..params.get(id).numel()).map(move |i| (id, i)))
        .collect();
    let picked: Vec<(ParamId, usize)> = if coords.len() <= max_coords {
        coords
    } else {
        let mut rng = stream_rng(seed, 0x6772_6164);
        let mut idx = sample(&mut rng, coords.len(), max_coords).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| coords[i]).collect()
    };

    let eval_at = |id: ParamId, i: usize, delta: f64| -> Result<f64> {
        let mut p = params.clone();
        p.tensor_mut(id).data_mut()[i] += delta;
        let mut g = Graph::new();
        let out = loss(&mut g, &p)?;
        Ok(g.value(&out).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (id, i) in picked {
        let analytic = grads.get(id).map_or(0.0, |t| t.data()[i]);
        let numeric = (eval_at(id, i, eps)? - eval_at(id, i, -eps)?) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((params.entry(id).name.clone(), i, analytic, numeric));
        }
    }
    Ok(report)
}
