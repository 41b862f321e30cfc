//! Orthogonal alignment of two embedding spaces: Procrustes with iterative
//! refinement on a CSLS mutual-nearest-neighbour dictionary.

use std::io::{Read, Write};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::kernels::gemm;

pub const W_MAGIC: &[u8; 4] = b"MMXW";

/// Thin SVD of a square `d×d` row-major matrix by one-sided Jacobi.
/// Returns `(u, sigma, v)` with `a = u · diag(sigma) · vᵀ`, `u` and `v`
/// orthogonal (columns of `u` for null singular values are completed to an
/// orthonormal basis). Singular values are unordered.
pub fn jacobi_svd(a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), d * d);
    // Work on columns.
    let mut cols: Vec<Vec<f64>> = (0..d).map(|j| (0..d).map(|i| a[i * d + j]).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    const TOL: f64 = 1e-15;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..d {
            for q in p + 1..d {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for (x, y) in cols[p].iter().zip(&cols[q]) {
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let cutoff = smax * d as f64 * 1e-13;
    let mut ucols: Vec<Option<Vec<f64>>> = cols
        .iter()
        .zip(&sigma)
        .map(|(c, &s)| (s > cutoff && s > 0.0).then(|| c.iter().map(|x| x / s).collect()))
        .collect();
    // Complete null directions against the basis built so far.
    let mut candidate = 0;
    for j in 0..d {
        if ucols[j].is_some() {
            continue;
        }
        loop {
            assert!(candidate < d, "orthonormal completion ran out of candidates");
            let mut e = vec![0.0; d];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for u in ucols.iter().flatten() {
                    let dot: f64 = u.iter().zip(&e).map(|(a, b)| a * b).sum();
                    e.iter_mut().zip(u).for_each(|(x, y)| *x -= dot * y);
                }
            }
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                e.iter_mut().for_each(|x| *x /= norm);
                ucols[j] = Some(e);
                break;
            }
        }
    }
    let mut u = vec![0.0; d * d];
    let mut v = vec![0.0; d * d];
    for j in 0..d {
        let uc = ucols[j].as_ref().expect("completed");
        for i in 0..d {
            u[i * d + j] = uc[i];
            v[i * d + j] = vcols[j][i];
        }
    }
    let sigma = sigma.into_iter().map(|s| if s > cutoff { s } else { 0.0 }).collect();
    (u, sigma, v)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Orthogonal `W` (d×d, row-major) minimising `‖X Wᵀ − Y‖_F` for paired rows
/// `x`, `y` of width `d`: `W = U Vᵀ` with `U Σ Vᵀ = SVD(Yᵀ X)`.
pub fn procrustes(x: &[f64], y: &[f64], d: usize) -> Result<Vec<f64>> {
    if d == 0 || x.len() % d != 0 || x.len() != y.len() {
        return Err(Error::Shape {
            op: "procrustes",
            lhs: vec![x.len() / d.max(1), d],
            rhs: vec![y.len() / d.max(1), d],
        });
    }
    let n = x.len() / d;
    if n < d {
        return Err(Error::Underdetermined { rows: n, dim: d });
    }
    let mut m = vec![0.0; d * d];
    gemm(d, n, d, y, true, x, false, 0.0, &mut m);
    let (u, _, v) = jacobi_svd(&m, d);
    let mut w = vec![0.0; d * d];
    gemm(d, d, d, &u, false, &v, true, 0.0, &mut w);
    Ok(w)
}

/// `‖WᵀW − I‖∞` (largest absolute entry).
pub fn orthogonality_error(w: &[f64], d: usize) -> f64 {
    let mut wtw = vec![0.0; d * d];
    gemm(d, d, d, w, true, w, false, 0.0, &mut wtw);
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((wtw[i * d + j] - target).abs());
        }
    }
    worst
}

/// `W x` for a row-major `d×d` matrix.
pub fn apply(w: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..d).map(|i| w[i * d..(i + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

pub fn cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 {
        return Err(Error::ZeroVector("x"));
    }
    if ny == 0.0 {
        return Err(Error::ZeroVector("y"));
    }
    Ok(x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / (nx * ny))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cross-domain similarity local scaling: `2·cos(x, y) − r_src − r_tgt`.
pub fn csls(x_mapped: &[f64], y: &[f64], r_src: f64, r_tgt: f64) -> Result<f64> {
    Ok(2.0 * cosine(x_mapped, y)? - r_src - r_tgt)
}

#[derive(Clone, Debug)]
pub struct AlignmentJob<'a> {
    pub src: &'a EmbeddingTable,
    pub tgt: &'a EmbeddingTable,
    pub seed_pairs: Vec<(String, String)>,
    pub iterations: usize,
    pub csls_k: usize,
    /// Only the first `dict_size_cap` rows of each table (file order, i.e. by
    /// frequency) take part in dictionary induction.
    pub dict_size_cap: usize,
}

impl<'a> AlignmentJob<'a> {
    pub const DEFAULT_ITERATIONS: usize = 5;
    pub const DEFAULT_CSLS_K: usize = 10;
    pub const DEFAULT_DICT_SIZE_CAP: usize = 10_000;

    pub fn new(src: &'a EmbeddingTable, tgt: &'a EmbeddingTable, seed_pairs: Vec<(String, String)>) -> Self {
        Self {
            src,
            tgt,
            seed_pairs,
            iterations: Self::DEFAULT_ITERATIONS,
            csls_k: Self::DEFAULT_CSLS_K,
            dict_size_cap: Self::DEFAULT_DICT_SIZE_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    pub dim: usize,
    /// Row-major `dim×dim`; maps a source vector `x` to `W x`.
    pub w: Vec<f64>,
    /// Mutual CSLS nearest neighbours under the final `W`.
    pub induced_dict: Vec<(String, String)>,
    /// Mean cosine of the dictionary pairs each iteration's `W` was fitted on.
    pub objective_trace: Vec<f64>,
    /// Set when induction produced too few pairs to refit and the last valid
    /// `W` was kept.
    pub stopped_early: bool,
}

/// Pairs of tokens spelled identically in both vocabularies, in source order.
pub fn identical_string_seeds(src: &EmbeddingTable, tgt: &EmbeddingTable) -> Vec<(String, String)> {
    src.words()
        .iter()
        .filter(|w| tgt.contains(w))
        .map(|w| (w.clone(), w.clone()))
        .collect()
}

/// Reads a `src<TAB or space>tgt` pair file.
pub fn parse_seed_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => pairs.push((a.to_string(), b.to_string())),
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected two whitespace-separated tokens".into(),
                })
            }
        }
    }
    Ok(pairs)
}

fn unit_rows(table: &EmbeddingTable, n: usize, w: Option<&[f64]>, what: &'static str) -> Result<Vec<f64>> {
    let d = table.dim();
    let mut out = vec![0.0; n * d];
    if let Some(w) = w {
        gemm(n, d, d, &table.matrix()[..n * d], false, w, true, 0.0, &mut out);
    } else {
        out.copy_from_slice(&table.matrix()[..n * d]);
    }
    for row in out.chunks_mut(d) {
        let nr = norm(row);
        if nr == 0.0 {
            return Err(Error::ZeroVector(what));
        }
        row.iter_mut().for_each(|x| *x /= nr);
    }
    Ok(out)
}

fn push_top_k(top: &mut Vec<f64>, k: usize, v: f64) {
    if top.len() == k && v <= *top.last().expect("k > 0") {
        return;
    }
    let pos = top.partition_point(|&x| x >= v);
    top.insert(pos, v);
    top.truncate(k);
}

const BLOCK_ROWS: usize = 512;

/// Mutual CSLS nearest neighbours between the (mapped, unit-norm) source rows
/// and target rows. Returns index pairs in source order.
pub fn mutual_csls_pairs(src: &[f64], tgt: &[f64], d: usize, k: usize) -> Vec<(usize, usize)> {
    let ns = src.len() / d;
    let nt = tgt.len() / d;
    if ns == 0 || nt == 0 {
        return Vec::new();
    }
    let k_src = k.min(nt).max(1);
    let k_tgt = k.min(ns).max(1);
    let mut r_src = vec![0.0; ns];
    let mut col_top: Vec<Vec<f64>> = vec![Vec::with_capacity(k_tgt + 1); nt];
    let mut block = vec![0.0; BLOCK_ROWS * nt];
    for start in (0..ns).step_by(BLOCK_ROWS) {
        let b = BLOCK_ROWS.min(ns - start);
        let sims = &mut block[..b * nt];
        gemm(b, d, nt, &src[start * d..(start + b) * d], false, tgt, true, 0.0, sims);
        for (i, row) in sims.chunks(nt).enumerate() {
            let mut top = Vec::with_capacity(k_src + 1);
            for (j, &s) in row.iter().enumerate() {
                push_top_k(&mut top, k_src, s);
                push_top_k(&mut col_top[j], k_tgt, s);
            }
            r_src[start + i] = top.iter().sum::<f64>() / top.len() as f64;
        }
    }
    let r_tgt: Vec<f64> = col_top.iter().map(|t| t.iter().sum::<f64>() / t.len() as f64).collect();

    let mut row_best = vec![(f64::NEG_INFINITY, 0usize); ns];
    let mut col_best = vec![(f64::NEG_INFINITY, 0usize); nt];
    for start in (0..ns).step_by(BLOCK_ROWS) {
        let b = BLOCK_ROWS.min(ns - start);
        let sims = &mut block[..b * nt];
        gemm(b, d, nt, &src[start * d..(start + b) * d], false, tgt, true, 0.0, sims);
        for (i, row) in sims.chunks(nt).enumerate() {
            let si = start + i;
            for (j, &s) in row.iter().enumerate() {
                let score = 2.0 * s - r_src[si] - r_tgt[j];
                if score > row_best[si].0 {
                    row_best[si] = (score, j);
                }
                if score > col_best[j].0 {
                    col_best[j] = (score, si);
                }
            }
        }
    }
    row_best
        .iter()
        .enumerate()
        .filter(|&(s, &(_, t))| col_best[t].1 == s)
        .map(|(s, &(_, t))| (s, t))
        .collect()
}

fn mean_pair_cosine(job: &AlignmentJob<'_>, w: &[f64], pairs: &[(usize, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for &(s, t) in pairs {
        total += cosine(&apply(w, job.src.row(s)), job.tgt.row(t))?;
    }
    Ok(total / pairs.len() as f64)
}

fn fit(job: &AlignmentJob<'_>, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let d = job.src.dim();
    let mut x = Vec::with_capacity(pairs.len() * d);
    let mut y = Vec::with_capacity(pairs.len() * d);
    for &(s, t) in pairs {
        x.extend_from_slice(job.src.row(s));
        y.extend_from_slice(job.tgt.row(t));
    }
    procrustes(&x, &y, d)
}

pub fn refine(job: &AlignmentJob<'_>) -> Result<AlignmentResult> {
    let d = job.src.dim();
    if job.tgt.dim() != d {
        return Err(Error::invalid(format!(
            "source dimension {d} differs from target dimension {}",
            job.tgt.dim()
        )));
    }
    if job.iterations == 0 || job.csls_k == 0 || job.dict_size_cap == 0 {
        return Err(Error::invalid("iterations, csls_k and dict_size_cap must be positive"));
    }
    if job.seed_pairs.is_empty() {
        return Err(Error::invalid("empty seed dictionary"));
    }
    let seeds = job
        .seed_pairs
        .iter()
        .map(|(s, t)| match (job.src.index(s), job.tgt.index(t)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::invalid(format!("seed pair ({s}, {t}) not in vocabularies"))),
        })
        .collect::<Result<Vec<_>>>()?;

    let ns = job.src.len().min(job.dict_size_cap);
    let nt = job.tgt.len().min(job.dict_size_cap);
    let tgt_unit = unit_rows(job.tgt, nt, None, "target table")?;

    let mut w = fit(job, &seeds)?;
    let mut trace = vec![mean_pair_cosine(job, &w, &seeds)?];
    let mut stopped_early = false;
    let mut dict = Vec::new();
    for it in 1..=job.iterations {
        let src_unit = unit_rows(job.src, ns, Some(&w), "source table")?;
        dict = mutual_csls_pairs(&src_unit, &tgt_unit, d, job.csls_k);
        if it == job.iterations {
            break;
        }
        if dict.len() < d {
            log::warn!(
                "iteration {it}: induced dictionary has {} pairs for dimension {d}; keeping previous mapping",
                dict.len()
            );
            stopped_early = true;
            break;
        }
        w = fit(job, &dict)?;
        trace.push(mean_pair_cosine(job, &w, &dict)?);
    }
    let induced_dict = dict
        .into_iter()
        .map(|(s, t)| (job.src.words()[s].clone(), job.tgt.words()[t].clone()))
        .collect();
    Ok(AlignmentResult {
        dim: d,
        w,
        induced_dict,
        objective_trace: trace,
        stopped_early,
    })
}

/// Copy of `table` with every row (and OOV bucket row) mapped through `w`.
pub fn map_table(table: &EmbeddingTable, w: &[f64]) -> Result<EmbeddingTable> {
    let rows = table
        .words()
        .iter()
        .enumerate()
        .map(|(i, word)| (word.clone(), apply(w, table.row(i))));
    let mapped = EmbeddingTable::new(table.dim(), rows)?;
    match table.buckets() {
        Some(b) => {
            let data = b.data().chunks(b.dim()).flat_map(|r| apply(w, r)).collect();
            mapped.with_buckets(crate::embeddings::Buckets::new(b.count(), b.dim(), data)?, table.ngram_range())
        }
        None => Ok(mapped),
    }
}

pub fn write_w<W: Write>(mut out: W, w: &[f64], dim: usize) -> Result<()> {
    if w.len() != dim * dim {
        return Err(Error::Format(format!("matrix has {} entries, expected {}", w.len(), dim * dim)));
    }
    out.write_all(W_MAGIC)?;
    out.write_all(&(dim as u32).to_le_bytes())?;
    for v in w {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_w<R: Read>(mut input: R) -> Result<(Vec<f64>, usize)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != W_MAGIC {
        return Err(Error::Format("bad mapping magic".into()));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    let mut w = Vec::with_capacity(dim * dim);
    let mut b8 = [0u8; 8];
    for _ in 0..dim * dim {
        input.read_exact(&mut b8)?;
        w.push(f64::from_le_bytes(b8));
    }
    Ok((w, dim))
}
