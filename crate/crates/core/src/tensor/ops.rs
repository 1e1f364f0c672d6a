//! Forward kernels. Each returns a fresh tensor or a shape error; the tape
//! checks finiteness of the result.

use super::{shape_err, Result, Scalar, Tensor};

pub(super) fn zip<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

/// `a / b`, defined as zero wherever `b == 0`.
pub(super) fn div_or_zero<T: Scalar>(a: T, b: T) -> T {
    if b == T::zero() {
        T::zero()
    } else {
        a / b
    }
}

pub(super) fn leaky_relu<T: Scalar>(a: &Tensor<T>, slope: T) -> Tensor<T> {
    a.map(|v| if v > T::zero() { v } else { v * slope })
}

pub(super) fn leaky_relu_slope_mask<T: Scalar>(a: &Tensor<T>, slope: T) -> Tensor<T> {
    a.map(|v| if v > T::zero() { T::one() } else { slope })
}

pub(super) fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return shape_err("matmul", format!("{sa:?} x {sb:?}"));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, a.data(), b.data(), &mut out);
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub(super) fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let s = a.shape();
    if s.len() != 2 {
        return shape_err("transpose", format!("needs rank 2, got {s:?}"));
    }
    let (m, n) = (s[0], s[1]);
    let src = a.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Sum over `axis`, keeping it as a dimension of size 1.
pub(super) fn sum_axis<T: Scalar>(a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= a.shape().len() {
        return shape_err("sum_axis", format!("axis {axis} out of range for {:?}", a.shape()));
    }
    let (outer, len, inner) = split_axis(a.shape(), axis);
    let src = a.data();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for k in 0..len {
            let base = (o * len + k) * inner;
            for i in 0..inner {
                out[o * inner + i] = out[o * inner + i] + src[base + i];
            }
        }
    }
    let mut shape = a.shape().to_vec();
    shape[axis] = 1;
    Ok(Tensor::from_parts(shape, out))
}

/// Per-dimension source strides for reading `from` while iterating over
/// `to`; zero on broadcast dimensions. `None` if not broadcastable.
fn broadcast_strides(from: &[usize], to: &[usize]) -> Option<Vec<usize>> {
    if from.iter().product::<usize>() == 1 {
        return Some(vec![0; to.len()]);
    }
    if from.len() != to.len() {
        return None;
    }
    let mut strides = vec![0; to.len()];
    let mut acc = 1;
    for d in (0..to.len()).rev() {
        if from[d] == to[d] {
            strides[d] = acc;
        } else if from[d] != 1 {
            return None;
        }
        acc *= from[d];
    }
    Some(strides)
}

/// Visit `(flat index in to, flat index in from)` for every element of `to`.
fn for_each_broadcast(to: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = to.len();
    let total: usize = to.iter().product();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for o in 0..total {
        f(o, src);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < to[d] {
                break;
            }
            src -= strides[d] * to[d];
            idx[d] = 0;
        }
    }
}

pub(super) fn check_broadcast(op: &'static str, from: &[usize], to: &[usize]) -> Result<Vec<usize>> {
    match broadcast_strides(from, to) {
        Some(s) if !to.is_empty() && !to.contains(&0) => Ok(s),
        _ => shape_err(op, format!("cannot broadcast {from:?} to {to:?}")),
    }
}

pub(super) fn broadcast<T: Scalar>(a: &Tensor<T>, to: &[usize]) -> Result<Tensor<T>> {
    let strides = check_broadcast("broadcast", a.shape(), to)?;
    let src = a.data();
    let mut out = vec![T::zero(); to.iter().product()];
    for_each_broadcast(to, &strides, |o, s| out[o] = src[s]);
    Ok(Tensor::from_parts(to.to_vec(), out))
}

/// Reverse of [`broadcast`]: sum `a` down to `to`.
pub(super) fn sum_to<T: Scalar>(a: &Tensor<T>, to: &[usize]) -> Result<Tensor<T>> {
    let strides = check_broadcast("sum_to", to, a.shape())?;
    let src = a.data();
    let mut out = vec![T::zero(); to.iter().product()];
    for_each_broadcast(a.shape(), &strides, |o, s| out[s] = out[s] + src[o]);
    Ok(Tensor::from_parts(to.to_vec(), out))
}

pub(super) fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let Some(first) = parts.first() else {
        return shape_err("concat", "no inputs");
    };
    let rank = first.shape().len();
    if axis >= rank {
        return shape_err("concat", format!("axis {axis} out of range for {:?}", first.shape()));
    }
    let mut total = 0;
    for p in parts {
        let s = p.shape();
        let same_elsewhere =
            s.len() == rank && (0..rank).all(|d| d == axis || s[d] == first.shape()[d]);
        if !same_elsewhere {
            return shape_err("concat", format!("{:?} vs {:?} on axis {axis}", s, first.shape()));
        }
        total += s[axis];
    }
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let block = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_parts(shape, out))
}

pub(super) fn slice<T: Scalar>(
    a: &Tensor<T>,
    axis: usize,
    start: usize,
    end: usize,
) -> Result<Tensor<T>> {
    let s = a.shape();
    if axis >= s.len() || start >= end || end > s[axis] {
        return shape_err("slice", format!("[{start}..{end}) on axis {axis} of {s:?}"));
    }
    let (outer, len, inner) = split_axis(s, axis);
    let width = (end - start) * inner;
    let mut out = Vec::with_capacity(outer * width);
    for o in 0..outer {
        let base = (o * len + start) * inner;
        out.extend_from_slice(&a.data()[base..base + width]);
    }
    let mut shape = s.to_vec();
    shape[axis] = end - start;
    Ok(Tensor::from_parts(shape, out))
}
