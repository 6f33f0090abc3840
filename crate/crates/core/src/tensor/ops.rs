//! Elementwise arithmetic, activations and reductions.

use super::shape::{broadcast_index_map, broadcast_shape};
use super::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

/// Where each output element reads its operands from.
enum Layout {
    Same,
    /// `b` repeats every `b.len()` elements (a trailing-dims broadcast).
    SuffixB(usize),
    /// `b` has one element per row of `a` (last dim 1), repeated `d` times.
    RowB(usize),
    General {
        a_idx: Vec<usize>,
        b_idx: Vec<usize>,
    },
}

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, BinOp::Sub)
    }

    /// Hadamard product with broadcasting.
    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, BinOp::Mul)
    }

    fn binary(&self, other: &Tensor<S>, op: BinOp) -> Result<Tensor<S>> {
        let out_shape = broadcast_shape(self.shape(), other.shape())?;
        let n = super::numel(&out_shape);
        let layout = if self.shape() == other.shape() {
            Layout::Same
        } else if self.shape() == out_shape.as_slice()
            && out_shape.ends_with(other.shape())
            && other.numel() > 0
        {
            Layout::SuffixB(other.numel())
        } else if self.shape() == out_shape.as_slice()
            && other.rank() == self.rank()
            && self.last_dim() > 0
            && other.shape().last() == Some(&1)
            && other.shape()[..other.rank() - 1] == self.shape()[..self.rank() - 1]
        {
            Layout::RowB(self.last_dim())
        } else {
            Layout::General {
                a_idx: broadcast_index_map(self.shape(), &out_shape),
                b_idx: broadcast_index_map(other.shape(), &out_shape),
            }
        };

        let data = {
            let a = self.data();
            let b = other.data();
            let f = |x: S, y: S| match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
            };
            match &layout {
                Layout::Same => a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect(),
                Layout::SuffixB(m) => (0..n).map(|i| f(a[i], b[i % m])).collect(),
                Layout::RowB(d) => a
                    .chunks(*d)
                    .zip(b.iter())
                    .flat_map(|(row, &y)| row.iter().map(move |&x| f(x, y)))
                    .collect(),
                Layout::General { a_idx, b_idx } => {
                    (0..n).map(|i| f(a[a_idx[i]], b[b_idx[i]])).collect()
                }
            }
        };

        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |g, _| {
                let ad = pa.data();
                let bd = pb.data();
                // operand positions read by output element i
                let ib_of = |i: usize| -> (usize, usize) {
                    match &layout {
                        Layout::Same => (i, i),
                        Layout::SuffixB(m) => (i, i % m),
                        Layout::RowB(d) => (i, i / d),
                        Layout::General { a_idx, b_idx } => (a_idx[i], b_idx[i]),
                    }
                };
                let a_full = !matches!(layout, Layout::General { .. });
                let ga = pa.requires_grad().then(|| {
                    if a_full {
                        match op {
                            BinOp::Add | BinOp::Sub => g.to_vec(),
                            BinOp::Mul => (0..g.len()).map(|i| g[i] * bd[ib_of(i).1]).collect(),
                        }
                    } else {
                        let mut ga = vec![S::zero(); pa.numel()];
                        for (i, &gi) in g.iter().enumerate() {
                            let (ia, ib) = ib_of(i);
                            ga[ia] += match op {
                                BinOp::Mul => gi * bd[ib],
                                _ => gi,
                            };
                        }
                        ga
                    }
                });
                let gb = pb.requires_grad().then(|| {
                    let term = |gi: S, ia: usize| match op {
                        BinOp::Add => gi,
                        BinOp::Sub => -gi,
                        BinOp::Mul => gi * ad[ia],
                    };
                    match &layout {
                        Layout::Same => (0..g.len()).map(|i| term(g[i], i)).collect(),
                        _ => {
                            let mut gb = vec![S::zero(); pb.numel()];
                            for (i, &gi) in g.iter().enumerate() {
                                let (ia, ib) = ib_of(i);
                                gb[ib] += term(gi, ia);
                            }
                            gb
                        }
                    }
                });
                vec![ga, gb]
            },
        ))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, c: f64) -> Tensor<S> {
        let c = S::of(c);
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g, _| {
            vec![Some(g.iter().map(|&gi| gi * c).collect())]
        })
    }

    pub fn neg(&self) -> Tensor<S> {
        self.scale(-1.0)
    }

    pub fn sigmoid(&self) -> Tensor<S> {
        let data = self.data().iter().map(|&x| sigmoid(x)).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], |g, y| {
            vec![Some(
                g.iter()
                    .zip(y)
                    .map(|(&gi, &yi)| gi * yi * (S::one() - yi))
                    .collect(),
            )]
        })
    }

    pub fn tanh(&self) -> Tensor<S> {
        let data = self.data().iter().map(|&x| x.tanh()).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], |g, y| {
            vec![Some(
                g.iter()
                    .zip(y)
                    .map(|(&gi, &yi)| gi * (S::one() - yi * yi))
                    .collect(),
            )]
        })
    }

    pub fn relu(&self) -> Tensor<S> {
        let data = self.data().iter().map(|&x| x.max(S::zero())).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], |g, y| {
            vec![Some(
                g.iter()
                    .zip(y)
                    .map(|(&gi, &yi)| if yi > S::zero() { gi } else { S::zero() })
                    .collect(),
            )]
        })
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor<S> {
        let data = self.data().iter().map(|&x| softplus(x)).collect();
        let input = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g, _| {
            let x = input.data();
            vec![Some(
                g.iter()
                    .zip(x.iter())
                    .map(|(&gi, &xi)| gi * sigmoid(xi))
                    .collect(),
            )]
        })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<S> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![], vec![total], vec![self.clone()], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<S> {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Sum over the last dimension; the last axis is dropped.
    pub fn sum_lastdim(&self) -> Tensor<S> {
        let d = self.last_dim();
        let rows = self.numel() / d.max(1);
        let data: Vec<S> = {
            let x = self.data();
            (0..rows)
                .map(|r| x[r * d..(r + 1) * d].iter().copied().sum())
                .collect()
        };
        let mut shape = self.shape().to_vec();
        shape.pop();
        Tensor::from_op(shape, data, vec![self.clone()], move |g, _| {
            let mut gx = Vec::with_capacity(rows * d);
            for &gi in g {
                gx.extend(std::iter::repeat_n(gi, d));
            }
            vec![Some(gx)]
        })
    }
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<S: Scalar>(x: S) -> S {
    // max(x, 0) + ln(1 + e^{-|x|})
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}
