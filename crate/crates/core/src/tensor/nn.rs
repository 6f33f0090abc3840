use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<S: Scalar> Tensor<S> {
    /// Softmax over the last dimension.
    ///
    /// `mask` (true = keep) has either one entry per element or repeats over
    /// the leading elements with a period that is a multiple of the last
    /// dimension. Masked entries come out exactly 0. A slice with no
    /// unmasked entry is an error.
    pub fn softmax_lastdim(&self, mask: Option<&[bool]>) -> Result<Tensor<S>> {
        self.softmax_impl(mask, true)
    }

    /// Like [`softmax_lastdim`](Self::softmax_lastdim) but fully masked
    /// slices produce all-zero weights instead of an error.
    pub fn softmax_lastdim_or_zero(&self, mask: Option<&[bool]>) -> Result<Tensor<S>> {
        self.softmax_impl(mask, false)
    }

    fn softmax_impl(&self, mask: Option<&[bool]>, strict: bool) -> Result<Tensor<S>> {
        let d = self.last_dim();
        let n = self.numel();
        if d == 0 {
            return Err(Error::dim("softmax over an empty last dimension"));
        }
        if let Some(m) = mask {
            if m.is_empty() || m.len() % d != 0 || !n.is_multiple_of(m.len()) {
                return Err(Error::dim(format!(
                    "mask of length {} does not match shape {:?}",
                    m.len(),
                    self.shape()
                )));
            }
        }
        let keep = |i: usize| mask.is_none_or(|m| m[i % m.len()]);
        let mut out = vec![S::zero(); n];
        {
            let x = self.data();
            for r in 0..n / d {
                let base = r * d;
                let mut max = S::neg_infinity();
                for j in 0..d {
                    if keep(base + j) && x[base + j] > max {
                        max = x[base + j];
                    }
                }
                if max == S::neg_infinity() {
                    if strict {
                        return Err(Error::DegenerateSlice(format!(
                            "softmax row {r} has no unmasked entries"
                        )));
                    }
                    continue;
                }
                let mut total = S::zero();
                for j in 0..d {
                    if keep(base + j) {
                        let e = (x[base + j] - max).exp();
                        out[base + j] = e;
                        total += e;
                    }
                }
                for v in &mut out[base..base + d] {
                    *v /= total;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |g, y| {
                let mut gx = vec![S::zero(); g.len()];
                for r in 0..g.len() / d {
                    let s = r * d..(r + 1) * d;
                    let dot: S = g[s.clone()].iter().zip(&y[s.clone()]).map(|(&a, &b)| a * b).sum();
                    for j in s {
                        gx[j] = y[j] * (g[j] - dot);
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Layer normalization over the last dimension followed by an affine
    /// map with per-feature `gain` and `bias`. Variance is the biased
    /// (population) estimate.
    pub fn layernorm(&self, gain: &Tensor<S>, bias: &Tensor<S>, eps: f64) -> Result<Tensor<S>> {
        let d = self.last_dim();
        if self.rank() == 0 || d < 2 {
            return Err(Error::dim(format!(
                "layernorm needs a last dimension of at least 2, got {:?}",
                self.shape()
            )));
        }
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(Error::dim(format!(
                "layernorm gain {:?} / bias {:?} must be [{d}]",
                gain.shape(),
                bias.shape()
            )));
        }
        // Written this way so NaN is rejected too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(eps > 0.0) {
            return Err(Error::Contract(format!("layernorm eps must be > 0, got {eps}")));
        }
        let eps = S::of(eps);
        let rows = self.numel() / d;
        let dn = S::of(d as f64);
        let mut xhat = vec![S::zero(); rows * d];
        let mut inv_std = vec![S::zero(); rows];
        let mut out = vec![S::zero(); rows * d];
        {
            let x = self.data();
            let (gn, bs) = (gain.data(), bias.data());
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<S>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
                let is = S::one() / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let h = (row[j] - mean) * is;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * gn[j] + bs[j];
                }
            }
        }
        let (pg, pb) = (gain.clone(), bias.clone());
        let needs_x = self.requires_grad();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            move |g, _| {
                let gn = pg.data();
                let gx = needs_x.then(|| {
                    let mut gx = vec![S::zero(); rows * d];
                    #[allow(clippy::needless_range_loop)]
                    for r in 0..rows {
                        let s = r * d;
                        let mut mean_dh = S::zero();
                        let mut mean_dh_h = S::zero();
                        for j in 0..d {
                            let dh = g[s + j] * gn[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[s + j];
                        }
                        mean_dh /= dn;
                        mean_dh_h /= dn;
                        for j in 0..d {
                            let dh = g[s + j] * gn[j];
                            gx[s + j] = inv_std[r] * (dh - mean_dh - xhat[s + j] * mean_dh_h);
                        }
                    }
                    gx
                });
                let ggain = pg.requires_grad().then(|| {
                    let mut acc = vec![S::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            acc[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                    acc
                });
                let gbias = pb.requires_grad().then(|| {
                    let mut acc = vec![S::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            acc[j] += g[r * d + j];
                        }
                    }
                    acc
                });
                vec![gx, ggain, gbias]
            },
        ))
    }
}
