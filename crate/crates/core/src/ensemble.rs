//! Independently seeded taggers combined by per-token majority vote.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledDataset;
use crate::error::{Error, Result};
use crate::tagger::{train, TaggerModel, TrainReport};

pub const MANIFEST_FORMAT: u32 = 1;
pub const DEFAULT_K: usize = 5;

/// One sentence's votes, `votes[member][token]`. Per token the most voted
/// label wins; among tied labels the one cast by the lowest-index member
/// is kept.
pub fn majority_vote<S: AsRef<str>>(votes: &[Vec<S>]) -> Result<Vec<String>> {
    let first = votes.first().ok_or_else(|| Error::invalid("no ensemble members"))?;
    let n = first.len();
    if let Some((k, v)) = votes.iter().enumerate().find(|(_, v)| v.len() != n) {
        return Err(Error::LengthMismatch(format!("member {k} voted {} labels, member 0 voted {n}", v.len())));
    }
    let mut out = Vec::with_capacity(n);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for i in 0..n {
        counts.clear();
        for v in votes {
            *counts.entry(v[i].as_ref()).or_default() += 1;
        }
        let best = counts.values().copied().max().unwrap_or(0);
        // Scanning in member order finds the lowest-index voter of a tied label.
        let label = votes.iter().map(|v| v[i].as_ref()).find(|l| counts[l] == best).unwrap();
        out.push(label.to_string());
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    members: Vec<TaggerModel>,
    seeds: Vec<u64>,
}

impl Ensemble {
    pub fn new(members: Vec<TaggerModel>) -> Result<Self> {
        let first = members.first().ok_or_else(|| Error::invalid("an ensemble needs at least one member"))?;
        for (k, m) in members.iter().enumerate().skip(1) {
            if m.labels() != first.labels() {
                return Err(Error::invalid(format!("member {k} has a different label set")));
            }
            if m.embedder().spec() != first.embedder().spec() || m.normalizes() != first.normalizes() {
                return Err(Error::invalid(format!("member {k} has a different input pipeline")));
            }
        }
        let seeds = members.iter().map(|m| m.config().seed).collect();
        Ok(Self { members, seeds })
    }

    pub fn members(&self) -> &[TaggerModel] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn labels(&self) -> &[String] {
        self.members[0].labels()
    }

    pub fn predict_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<String>> {
        let votes = self
            .members
            .iter()
            .map(|m| m.predict_sentence(tokens))
            .collect::<Result<Vec<_>>>()?;
        majority_vote(&votes)
    }

    pub fn predict<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> Result<Vec<Vec<String>>> {
        sentences.iter().map(|s| self.predict_sentence(s)).collect()
    }

    /// Writes `{prefix}.{k}.mmx` for every member and `{prefix}.json` as
    /// the manifest, all inside `dir`. Returns the manifest path.
    pub fn save(&self, dir: &Path, prefix: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (k, m) in self.members.iter().enumerate() {
            let name = format!("{prefix}.{k}.mmx");
            m.save(&dir.join(&name))?;
            files.push(name);
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT,
            k: self.members.len(),
            seeds: self.seeds.clone(),
            labels: self.labels().to_vec(),
            members: files,
        };
        let path = dir.join(format!("{prefix}.json"));
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }

    /// Member paths in the manifest are resolved against its directory.
    pub fn load(manifest: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(&fs::read(manifest)?)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("unsupported manifest format {}", m.format)));
        }
        if m.members.len() != m.k {
            return Err(Error::Format(format!("manifest lists {} members for k = {}", m.members.len(), m.k)));
        }
        let dir = manifest.parent().unwrap_or(Path::new("."));
        let members = m
            .members
            .iter()
            .map(|f| TaggerModel::load(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let e = Self::new(members)?;
        if e.labels() != m.labels.as_slice() {
            return Err(Error::Format("manifest labels disagree with member files".into()));
        }
        Ok(e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub labels: Vec<String>,
    pub members: Vec<String>,
}

/// Trains one member per seed with up to `jobs` members in flight.
/// `build` must return a freshly initialized model for a seed. Members
/// only depend on their own seed, so the outcome does not depend on
/// `jobs` or on scheduling.
pub fn train_with_seeds<F>(
    build: F,
    seeds: &[u64],
    jobs: usize,
    train_set: &LabeledDataset,
    dev: &LabeledDataset,
) -> Result<(Ensemble, Vec<TrainReport>)>
where
    F: Fn(u64) -> Result<TaggerModel> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::invalid("an ensemble needs at least one member"));
    }
    let run = |seed: u64| -> Result<(TaggerModel, TrainReport)> {
        let mut m = build(seed)?;
        let r = train(&mut m, train_set, dev)?;
        Ok((m, r))
    };
    let results: Vec<Result<(TaggerModel, TrainReport)>> = if jobs <= 1 {
        seeds.iter().map(|&s| run(s)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| seeds.par_iter().map(|&s| run(s)).collect())
    };
    let mut members = Vec::with_capacity(seeds.len());
    let mut reports = Vec::with_capacity(seeds.len());
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok((m, rep)) => {
                log::info!("member {index} best dev {:.4} at epoch {}", rep.best_dev, rep.best_epoch);
                members.push(m);
                reports.push(rep);
            }
            Err(e) => {
                return Err(Error::Member {
                    index,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok((Ensemble::new(members)?, reports))
}

/// Member `k` is trained with seed `base_seed + k`.
pub fn train_ensemble<F>(
    build: F,
    k: usize,
    base_seed: u64,
    jobs: usize,
    train_set: &LabeledDataset,
    dev: &LabeledDataset,
) -> Result<(Ensemble, Vec<TrainReport>)>
where
    F: Fn(u64) -> Result<TaggerModel> + Sync,
{
    let seeds: Vec<u64> = (0..k as u64).map(|i| base_seed + i).collect();
    train_with_seeds(build, &seeds, jobs, train_set, dev)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn v(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn strict_majority() {
        assert_eq!(majority_vote(&[v("A"), v("A"), v("B")]).unwrap(), v("A"));
    }

    #[test]
    fn single_member_passes_through() {
        assert_eq!(majority_vote(&[v("B-PER I-PER O")]).unwrap(), v("B-PER I-PER O"));
    }

    #[test]
    fn ties_go_to_lowest_member() {
        assert_eq!(majority_vote(&[v("A"), v("B")]).unwrap(), v("A"));
        assert_eq!(majority_vote(&[v("B"), v("A")]).unwrap(), v("B"));
        assert_eq!(majority_vote(&[v("C"), v("A"), v("B"), v("B"), v("A")]).unwrap(), v("A"));
        assert_eq!(majority_vote(&[v("C"), v("B"), v("A"), v("B"), v("A")]).unwrap(), v("B"));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(matches!(majority_vote(&[v("A B"), v("A")]), Err(Error::LengthMismatch(_))));
        assert!(majority_vote::<String>(&[]).is_err());
    }

    fn votes() -> impl Strategy<Value = Vec<Vec<String>>> {
        (1usize..7, 1usize..6).prop_flat_map(|(k, n)| {
            prop::collection::vec(prop::collection::vec(prop::sample::select(vec!["A", "B", "C"]), n), k)
                .prop_map(|v| v.into_iter().map(|m| m.into_iter().map(String::from).collect()).collect())
        })
    }

    proptest! {
        #[test]
        fn winner_is_a_cast_vote_with_maximal_count(votes in votes()) {
            let out = majority_vote(&votes).unwrap();
            for (i, label) in out.iter().enumerate() {
                let count = |l: &str| votes.iter().filter(|m| m[i] == l).count();
                prop_assert!(votes.iter().any(|m| &m[i] == label));
                prop_assert!(votes.iter().all(|m| count(&m[i]) <= count(label)));
            }
        }

        #[test]
        fn permutation_invariant_without_ties(votes in votes(), rot in 0usize..7) {
            let k = votes.len();
            let n = votes[0].len();
            let untied = (0..n).all(|i| {
                let mut c: HashMap<&str, usize> = HashMap::new();
                for m in &votes {
                    *c.entry(m[i].as_str()).or_default() += 1;
                }
                let best = *c.values().max().unwrap();
                c.values().filter(|&&x| x == best).count() == 1
            });
            prop_assume!(untied);
            let mut rotated = votes.clone();
            rotated.rotate_left(rot % k);
            prop_assert_eq!(majority_vote(&votes).unwrap(), majority_vote(&rotated).unwrap());
        }
    }
}
