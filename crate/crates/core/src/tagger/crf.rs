//! Linear-chain CRF with explicit BOS/EOS states.
//!
//! Transitions are `(L+2)×(L+2)` with `BOS = L`, `EOS = L+1`; moves into BOS
//! and out of EOS are pinned at [`IMPOSSIBLE`].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{CustomOp, Tensor};

pub const IMPOSSIBLE: f64 = -1e4;

pub fn bos(labels: usize) -> usize {
    labels
}

pub fn eos(labels: usize) -> usize {
    labels + 1
}

pub fn init_transitions(labels: usize) -> Tensor {
    let s = labels + 2;
    let mut t = vec![0.0; s * s];
    for r in 0..s {
        t[r * s + bos(labels)] = IMPOSSIBLE;
        t[eos(labels) * s + r] = IMPOSSIBLE;
    }
    Tensor::new(vec![s, s], t).expect("non-empty")
}

fn lse(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct Lattice<'a> {
    e: &'a [f64],
    t: &'a [f64],
    n: usize,
    l: usize,
}

impl<'a> Lattice<'a> {
    fn new(emissions: &'a Tensor, transitions: &'a Tensor) -> Result<Self> {
        let (n, l) = (emissions.rows(), emissions.cols());
        if emissions.shape().len() != 2 || transitions.shape() != [l + 2, l + 2] {
            return Err(Error::Shape {
                op: "crf",
                lhs: emissions.shape().to_vec(),
                rhs: transitions.shape().to_vec(),
            });
        }
        Ok(Self {
            e: emissions.data(),
            t: transitions.data(),
            n,
            l,
        })
    }

    fn em(&self, i: usize, y: usize) -> f64 {
        self.e[i * self.l + y]
    }

    fn tr(&self, a: usize, b: usize) -> f64 {
        self.t[a * (self.l + 2) + b]
    }

    fn alpha(&self) -> Vec<f64> {
        let (n, l) = (self.n, self.l);
        let mut a = vec![0.0; n * l];
        for y in 0..l {
            a[y] = self.tr(bos(l), y) + self.em(0, y);
        }
        for i in 1..n {
            for y in 0..l {
                let prev = &a[(i - 1) * l..i * l];
                a[i * l + y] = lse(prev.iter().enumerate().map(|(p, v)| v + self.tr(p, y))) + self.em(i, y);
            }
        }
        a
    }

    fn beta(&self) -> Vec<f64> {
        let (n, l) = (self.n, self.l);
        let mut b = vec![0.0; n * l];
        for y in 0..l {
            b[(n - 1) * l + y] = self.tr(y, eos(l));
        }
        for i in (0..n - 1).rev() {
            for y in 0..l {
                let next = &b[(i + 1) * l..(i + 2) * l];
                b[i * l + y] = lse(next.iter().enumerate().map(|(q, v)| self.tr(y, q) + self.em(i + 1, q) + v));
            }
        }
        b
    }

    fn log_z(&self, alpha: &[f64]) -> f64 {
        let (n, l) = (self.n, self.l);
        lse((0..l).map(|y| alpha[(n - 1) * l + y] + self.tr(y, eos(l))))
    }

    fn path_score(&self, path: &[usize]) -> f64 {
        let l = self.l;
        let mut s = self.tr(bos(l), path[0]) + self.em(0, path[0]);
        for i in 1..self.n {
            s += self.tr(path[i - 1], path[i]);
            s += self.em(i, path[i]);
        }
        s + self.tr(path[self.n - 1], eos(l))
    }
}

pub fn log_partition(emissions: &Tensor, transitions: &Tensor) -> Result<f64> {
    let lat = Lattice::new(emissions, transitions)?;
    Ok(lat.log_z(&lat.alpha()))
}

/// Score of one label path, including BOS and EOS transitions.
pub fn path_score(emissions: &Tensor, transitions: &Tensor, path: &[usize]) -> Result<f64> {
    let lat = Lattice::new(emissions, transitions)?;
    if path.len() != lat.n {
        return Err(Error::LengthMismatch(format!("{} positions, path of {}", lat.n, path.len())));
    }
    Ok(lat.path_score(path))
}

/// Negative log-likelihood of `gold`: `log Z − score(gold)`, clamped at 0
/// against rounding.
pub fn nll(emissions: &Tensor, transitions: &Tensor, gold: &[usize]) -> Result<f64> {
    Ok((log_partition(emissions, transitions)? - path_score(emissions, transitions, gold)?).max(0.0))
}

/// Best path and its score. Ties go to the lowest label index at every
/// backtracking step.
pub fn viterbi(emissions: &Tensor, transitions: &Tensor) -> Result<(Vec<usize>, f64)> {
    let lat = Lattice::new(emissions, transitions)?;
    let (n, l) = (lat.n, lat.l);
    let mut delta = vec![0.0; n * l];
    let mut back = vec![0usize; n * l];
    for y in 0..l {
        delta[y] = lat.tr(bos(l), y) + lat.em(0, y);
    }
    for i in 1..n {
        for y in 0..l {
            let mut best = (f64::NEG_INFINITY, 0);
            for p in 0..l {
                let s = delta[(i - 1) * l + p] + lat.tr(p, y);
                if s > best.0 {
                    best = (s, p);
                }
            }
            delta[i * l + y] = best.0 + lat.em(i, y);
            back[i * l + y] = best.1;
        }
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for y in 0..l {
        let s = delta[(n - 1) * l + y] + lat.tr(y, eos(l));
        if s > best.0 {
            best = (s, y);
        }
    }
    let mut path = vec![best.1; n];
    for i in (1..n).rev() {
        path[i - 1] = back[i * l + path[i]];
    }
    Ok((path, best.0))
}

/// CRF negative log-likelihood as a graph op over `[emissions, transitions]`.
/// The backward pass uses forward-backward marginals.
pub struct CrfNll {
    gold: Vec<usize>,
}

impl CrfNll {
    pub fn new(gold: Vec<usize>) -> Arc<Self> {
        Arc::new(Self { gold })
    }
}

impl CustomOp for CrfNll {
    fn name(&self) -> &'static str {
        "crf_nll"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let lat = Lattice::new(inputs[0], inputs[1])?;
        if self.gold.len() != lat.n || self.gold.iter().any(|&y| y >= lat.l) {
            return Err(Error::invalid("gold labels do not fit the emission matrix"));
        }
        let loss = lat.log_z(&lat.alpha()) - lat.path_score(&self.gold);
        Ok(Tensor::scalar(loss.max(0.0)))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let lat = Lattice::new(inputs[0], inputs[1]).expect("validated in forward");
        let (n, l) = (lat.n, lat.l);
        let s = l + 2;
        let g = grad.item();
        let alpha = lat.alpha();
        let beta = lat.beta();
        let log_z = lat.log_z(&alpha);
        let mut de = vec![0.0; n * l];
        let mut dt = vec![0.0; s * s];
        for i in 0..n {
            for y in 0..l {
                let p = (alpha[i * l + y] + beta[i * l + y] - log_z).exp();
                de[i * l + y] = p;
            }
        }
        for y in 0..l {
            dt[bos(l) * s + y] += de[y];
            dt[y * s + eos(l)] += de[(n - 1) * l + y];
        }
        for i in 1..n {
            for p in 0..l {
                for y in 0..l {
                    let m = alpha[(i - 1) * l + p] + lat.tr(p, y) + lat.em(i, y) + beta[i * l + y] - log_z;
                    dt[p * s + y] += m.exp();
                }
            }
        }
        let gold = &self.gold;
        for (i, &y) in gold.iter().enumerate() {
            de[i * l + y] -= 1.0;
            if i > 0 {
                dt[gold[i - 1] * s + y] -= 1.0;
            }
        }
        dt[bos(l) * s + gold[0]] -= 1.0;
        dt[gold[n - 1] * s + eos(l)] -= 1.0;
        de.iter_mut().for_each(|v| *v *= g);
        dt.iter_mut().for_each(|v| *v *= g);
        vec![
            Tensor::new(vec![n, l], de).expect("shape"),
            Tensor::new(vec![s, s], dt).expect("shape"),
        ]
    }
}
