//! Shape manipulation: broadcasting rules, reshape, permute, concat,
//! slicing, padding and row gathers.

use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Numpy-style broadcast of two shapes, aligned at the trailing dimension.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::dim(format!(
                    "shapes {a:?} and {b:?} are not broadcastable"
                )))
            }
        };
    }
    Ok(out)
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each flat index of `out`, the flat index of the broadcast source.
pub(crate) fn broadcast_index_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - src.len();
    let src_strides = strides(src);
    // stride 0 along broadcast axes
    let eff: Vec<usize> = (0..out.len())
        .map(|i| {
            if i < offset || src[i - offset] == 1 {
                0
            } else {
                src_strides[i - offset]
            }
        })
        .collect();
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out.len()];
    let mut flat = 0usize;
    for _ in 0..n {
        map.push(flat);
        for ax in (0..out.len()).rev() {
            idx[ax] += 1;
            flat += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            flat -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

impl<S: Scalar> Tensor<S> {
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<S>> {
        if numel(&shape) != self.numel() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        let data = self.to_vec();
        Ok(Tensor::from_op(shape, data, vec![self.clone()], |g, _| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<S>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim(format!(
                "invalid permutation {axes:?} for rank {rank}"
            )));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let in_strides = strides(&in_shape);
        let src_stride: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        // src[i] = flat input index feeding output element i
        let n = self.numel();
        let mut src = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        let mut flat = 0usize;
        for _ in 0..n {
            src.push(flat);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                flat += src_stride[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                flat -= src_stride[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        let data = {
            let x = self.data();
            src.iter().map(|&i| x[i]).collect()
        };
        Ok(Tensor::from_op(out_shape, data, vec![self.clone()], move |g, _| {
            let mut gx = vec![S::zero(); g.len()];
            for (o, &i) in src.iter().enumerate() {
                gx[i] = g[o];
            }
            vec![Some(gx)]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&self) -> Result<Tensor<S>> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::dim(format!(
                "transpose needs rank >= 2, got {:?}",
                self.shape()
            )));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&self, other: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
        let (sa, sb) = (self.shape(), other.shape());
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa.iter().zip(sb).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::dim(format!(
                "cannot concatenate {sa:?} and {sb:?} along axis {axis}"
            )));
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let (ca, cb) = (sa[axis] * inner, sb[axis] * inner);
        let mut shape = sa.to_vec();
        shape[axis] += sb[axis];
        let data = {
            let (a, b) = (self.data(), other.data());
            let mut out = Vec::with_capacity(outer * (ca + cb));
            for o in 0..outer {
                out.extend_from_slice(&a[o * ca..(o + 1) * ca]);
                out.extend_from_slice(&b[o * cb..(o + 1) * cb]);
            }
            out
        };
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone(), other.clone()],
            move |g, _| {
                let mut ga = ra.then(|| Vec::with_capacity(outer * ca));
                let mut gb = rb.then(|| Vec::with_capacity(outer * cb));
                for o in 0..outer {
                    let row = &g[o * (ca + cb)..(o + 1) * (ca + cb)];
                    if let Some(ga) = ga.as_mut() {
                        ga.extend_from_slice(&row[..ca]);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb.extend_from_slice(&row[ca..]);
                    }
                }
                vec![ga, gb]
            },
        ))
    }

    pub fn concat_lastdim(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if self.rank() == 0 || self.rank() != other.rank() {
            return Err(Error::dim(format!(
                "cannot concatenate {:?} and {:?} along the last axis",
                self.shape(),
                other.shape()
            )));
        }
        self.concat(other, self.rank() - 1)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<S>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::dim(format!(
                "narrow({axis}, {start}, {len}) out of bounds for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis] * inner;
        let (off, chunk) = (start * inner, len * inner);
        let data = {
            let x = self.data();
            let mut out = Vec::with_capacity(outer * chunk);
            for o in 0..outer {
                out.extend_from_slice(&x[o * full + off..o * full + off + chunk]);
            }
            out
        };
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let n_in = self.numel();
        Ok(Tensor::from_op(out_shape, data, vec![self.clone()], move |g, _| {
            let mut gx = vec![S::zero(); n_in];
            for o in 0..outer {
                gx[o * full + off..o * full + off + chunk]
                    .copy_from_slice(&g[o * chunk..(o + 1) * chunk]);
            }
            vec![Some(gx)]
        }))
    }

    /// Inverse of [`concat_lastdim`](Self::concat_lastdim) for a two-way split.
    pub fn split_lastdim(&self, first: usize) -> Result<(Tensor<S>, Tensor<S>)> {
        let axis = self.rank().checked_sub(1).ok_or_else(|| Error::dim("split of a scalar"))?;
        let d = self.last_dim();
        if first > d {
            return Err(Error::dim(format!("split at {first} beyond last dim {d}")));
        }
        Ok((self.narrow(axis, 0, first)?, self.narrow(axis, first, d - first)?))
    }

    /// Right-pads `axis` with zeros up to `len`.
    pub fn pad_axis(&self, axis: usize, len: usize) -> Result<Tensor<S>> {
        let shape = self.shape();
        if axis >= shape.len() || len < shape[axis] {
            return Err(Error::dim(format!(
                "cannot pad axis {axis} of {shape:?} to {len}"
            )));
        }
        if len == shape[axis] {
            return Ok(self.clone());
        }
        let mut pad_shape = shape.to_vec();
        pad_shape[axis] = len - shape[axis];
        self.concat(&Tensor::zeros(pad_shape), axis)
    }

    /// Row lookup on a `[rows, d]` view: output row `i` is input row
    /// `indices[i]`. Gradients scatter-add back into the source rows.
    pub fn gather_rows(&self, indices: &[usize], out_shape: Vec<usize>) -> Result<Tensor<S>> {
        let d = self.last_dim();
        let rows = self.numel() / d.max(1);
        if numel(&out_shape) != indices.len() * d || out_shape.last() != Some(&d) {
            return Err(Error::dim(format!(
                "gather of {} rows of width {d} cannot produce {out_shape:?}",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Index(format!("row {bad} out of range [0, {rows})")));
        }
        let data = {
            let x = self.data();
            let mut out = Vec::with_capacity(indices.len() * d);
            for &i in indices {
                out.extend_from_slice(&x[i * d..(i + 1) * d]);
            }
            out
        };
        let idx = indices.to_vec();
        let n_in = self.numel();
        Ok(Tensor::from_op(out_shape, data, vec![self.clone()], move |g, _| {
            let mut gx = vec![S::zero(); n_in];
            for (r, &i) in idx.iter().enumerate() {
                for (acc, &gv) in gx[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                    *acc += gv;
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Embedding lookup: `self` is a `[V, d]` table, `ids` a `[batch, len]`
    /// grid flattened row-major. Returns `[batch, len, d]`.
    pub fn embedding_gather(&self, ids: &[usize], batch: usize, len: usize) -> Result<Tensor<S>> {
        if self.rank() != 2 {
            return Err(Error::dim(format!(
                "embedding table must be [V, d], got {:?}",
                self.shape()
            )));
        }
        if ids.len() != batch * len {
            return Err(Error::dim(format!(
                "{} ids for a [{batch}, {len}] grid",
                ids.len()
            )));
        }
        let d = self.shape()[1];
        self.gather_rows(ids, vec![batch, len, d])
    }
}
