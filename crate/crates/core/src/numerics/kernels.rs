//! Forward kernels and the shape helpers shared by both execution backends.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Splits `shape` around `axis` into `(outer, axis_len, inner)`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Shape {
            op,
            lhs: shape.to_vec(),
            rhs: vec![axis],
        });
    }
    Ok(())
}

/// Shape with `axis` removed; a fully reduced tensor keeps shape `[1]`.
pub(crate) fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

pub(crate) fn ensure_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericFault { op })
    }
}

/// `C = alpha * op(A) * op(B)` for row-major matrices, accumulating into `c` with `beta`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked by the callers against m, k, n and the
    // strides above address exactly those row-major extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
    Ok(Tensor::with_shape(vec![m, n], out))
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 {
        return Err(Error::Shape {
            op: "transpose",
            lhs: a.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let src = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Ok(Tensor::with_shape(vec![c, r], out))
}

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Shape {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Element strides of `shape` viewed inside the broadcast `out` shape
/// (zero along broadcast dimensions).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        let j = i as isize - (rank - shape.len()) as isize;
        if j >= 0 {
            let d = shape[j as usize];
            if d != 1 {
                strides[i] = acc;
            }
            acc *= d;
        }
    }
    strides
}

/// For every output element, the flat source index in a tensor of `shape`.
pub(crate) fn broadcast_index_map(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let strides = broadcast_strides(shape, out);
    let numel: usize = out.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; out.len()];
    let mut off = 0usize;
    for _ in 0..numel {
        map.push(off);
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out[d] {
                break;
            }
            off -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    map
}

/// `true` when `small` (leading ones stripped) is a suffix of `big`.
fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    let trimmed: Vec<usize> = small.iter().copied().skip_while(|&d| d == 1).collect();
    trimmed.len() <= big.len() && big[big.len() - trimmed.len()..] == trimmed[..]
}

pub(crate) fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let out_shape = broadcast_shape(op, a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f64> = if a.shape() == b.shape() {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else if out_shape == a.shape() && is_suffix(b.shape(), a.shape()) {
        let m = bd.len();
        ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % m])).collect()
    } else if out_shape == b.shape() && is_suffix(a.shape(), b.shape()) {
        let m = ad.len();
        bd.iter().enumerate().map(|(i, &y)| f(ad[i % m], y)).collect()
    } else {
        let am = broadcast_index_map(a.shape(), &out_shape);
        let bm = broadcast_index_map(b.shape(), &out_shape);
        am.iter().zip(&bm).map(|(&i, &j)| f(ad[i], bd[j])).collect()
    };
    Ok(Tensor::with_shape(out_shape, data))
}

/// Sums a gradient of the broadcast shape back down to `shape`.
pub(crate) fn unbroadcast(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let numel: usize = shape.iter().product();
    let mut out = vec![0.0; numel];
    if is_suffix(shape, grad.shape()) {
        for (i, g) in grad.data().iter().enumerate() {
            out[i % numel] += g;
        }
    } else {
        let map = broadcast_index_map(shape, grad.shape());
        for (g, &j) in grad.data().iter().zip(&map) {
            out[j] += g;
        }
    }
    Tensor::with_shape(shape.to_vec(), out)
}

pub fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::with_shape(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn concat(xs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = xs.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    check_axis("concat", first.shape(), axis)?;
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = 0;
    for x in xs {
        let ok = x.shape().len() == first.shape().len()
            && x.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (p, q))| d == axis || p == q);
        if !ok {
            return Err(Error::Shape {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        out_shape[axis] += x.shape()[axis];
    }
    let (outer, _, inner) = split_axis(&out_shape, axis);
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for x in xs {
            let chunk = x.shape()[axis] * inner;
            data.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::with_shape(out_shape, data))
}

pub fn slice(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    check_axis("slice", x.shape(), axis)?;
    if len == 0 || start + len > x.shape()[axis] {
        return Err(Error::Shape {
            op: "slice",
            lhs: x.shape().to_vec(),
            rhs: vec![axis, start, len],
        });
    }
    let (outer, alen, inner) = split_axis(x.shape(), axis);
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * alen * inner + start * inner;
        data.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Ok(Tensor::with_shape(shape, data))
}

/// Stacks equally shaped tensors along a new axis.
pub fn stack(xs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = xs.first().ok_or_else(|| Error::invalid("stack of zero tensors"))?;
    if axis > first.shape().len() {
        return Err(Error::Shape {
            op: "stack",
            lhs: first.shape().to_vec(),
            rhs: vec![axis],
        });
    }
    let mut expanded = first.shape().to_vec();
    expanded.insert(axis, 1);
    let views: Vec<Tensor> = xs
        .iter()
        .map(|x| {
            if x.shape() != first.shape() {
                Err(Error::Shape {
                    op: "stack",
                    lhs: first.shape().to_vec(),
                    rhs: x.shape().to_vec(),
                })
            } else {
                Ok(x.reshaped(expanded.clone()))
            }
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = views.iter().collect();
    concat(&refs, axis)
}

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("softmax", x.shape(), axis)?;
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let max = (0..len).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in 0..len {
                let e = (src[at(k)] - max).exp();
                out[at(k)] = e;
                sum += e;
            }
            for k in 0..len {
                out[at(k)] /= sum;
            }
        }
    }
    Ok(Tensor::with_shape(x.shape().to_vec(), out))
}

pub fn logsumexp(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("logsumexp", x.shape(), axis)?;
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let max = (0..len).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..len).map(|k| (src[at(k)] - max).exp()).sum();
            out[o * inner + i] = max + sum.ln();
        }
    }
    Ok(Tensor::with_shape(reduced_shape(x.shape(), axis), out))
}

pub fn sum_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("sum_axis", x.shape(), axis)?;
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..len {
            let base = o * len * inner + k * inner;
            for i in 0..inner {
                out[o * inner + i] += src[base + i];
            }
        }
    }
    Ok(Tensor::with_shape(reduced_shape(x.shape(), axis), out))
}

/// Max along `axis`, with the winning (lowest on ties) index per output element.
pub fn max_axis(x: &Tensor, axis: usize) -> Result<(Tensor, Vec<usize>)> {
    check_axis("max_axis", x.shape(), axis)?;
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0; outer * inner];
    let mut arg = vec![0usize; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut best = 0;
            for k in 1..len {
                if src[o * len * inner + k * inner + i] > src[o * len * inner + best * inner + i] {
                    best = k;
                }
            }
            out[o * inner + i] = src[o * len * inner + best * inner + i];
            arg[o * inner + i] = best;
        }
    }
    Ok((Tensor::with_shape(reduced_shape(x.shape(), axis), out), arg))
}

/// Normalizes over the last axis; returns the output and per-row `1/sqrt(var + eps)`.
pub fn layer_norm(x: &Tensor, eps: f64) -> Result<(Tensor, Vec<f64>)> {
    let d = *x.shape().last().expect("non-empty shape");
    let rows = x.numel() / d;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &src[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + eps).sqrt();
        for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
            *o = (v - mean) * s;
        }
        rstd.push(s);
    }
    Ok((Tensor::with_shape(x.shape().to_vec(), out), rstd))
}

/// Gathers rows (first-axis slices) of `table`.
pub fn gather_rows(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let rows = table.shape()[0];
    let width = table.numel() / rows;
    if ids.is_empty() {
        return Err(Error::invalid("gather of zero rows"));
    }
    let mut data = Vec::with_capacity(ids.len() * width);
    for &id in ids {
        if id >= rows {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: table.shape().to_vec(),
                rhs: vec![id],
            });
        }
        data.extend_from_slice(&table.data()[id * width..(id + 1) * width]);
    }
    let mut shape = table.shape().to_vec();
    shape[0] = ids.len();
    Ok(Tensor::with_shape(shape, data))
}
