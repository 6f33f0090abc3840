use super::layers::{ForwardCtx, Linear};
use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scaled dot-product attention over `heads` parallel subspaces, with
/// query/key/value/output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention<S: Scalar> {
    pub query: Linear<S>,
    pub key: Linear<S>,
    pub value: Linear<S>,
    pub output: Linear<S>,
    pub heads: usize,
    pub d: usize,
}

impl<S: Scalar> MultiHeadAttention<S> {
    pub fn new(store: &mut ParamStore<S>, name: &str, rng: &mut Rng, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!("hidden dim {d} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), rng, d, d, true)?,
            key: Linear::new(store, &format!("{name}.k"), rng, d, d, true)?,
            value: Linear::new(store, &format!("{name}.v"), rng, d, d, true)?,
            output: Linear::new(store, &format!("{name}.o"), rng, d, d, true)?,
            heads,
            d,
        })
    }

    pub fn param_count(d: usize) -> usize {
        4 * Linear::<S>::param_count(d, d, true)
    }

    /// `q: [B, lq, d]`, `k, v: [B, lk, d]`, `kv_mask: [B, lk]` (true = real).
    ///
    /// A query row with no visible key is a degenerate-slice error.
    pub fn forward(
        &self,
        q: &Tensor<S>,
        k: &Tensor<S>,
        v: &Tensor<S>,
        kv_mask: &[bool],
        causal: bool,
    ) -> Result<Tensor<S>> {
        let mut ctx = ForwardCtx::eval();
        Ok(self.attend(q, k, v, kv_mask, causal, true, &mut ctx, 0.0)?.0)
    }

    #[allow(clippy::too_many_arguments)]
    /// Training-path variant: query rows with no visible key produce zero
    /// vectors, and dropout with probability `dropout_p` is applied to the
    /// attention weights when `ctx` is in training mode.
    pub fn forward_lenient(
        &self,
        q: &Tensor<S>,
        k: &Tensor<S>,
        v: &Tensor<S>,
        kv_mask: &[bool],
        causal: bool,
        ctx: &mut ForwardCtx,
        dropout_p: f64,
    ) -> Result<Tensor<S>> {
        Ok(self.attend(q, k, v, kv_mask, causal, false, ctx, dropout_p)?.0)
    }

    /// Output together with the `[B, heads, lq, lk]` attention weights.
    pub fn forward_with_weights(
        &self,
        q: &Tensor<S>,
        k: &Tensor<S>,
        v: &Tensor<S>,
        kv_mask: &[bool],
        causal: bool,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let mut ctx = ForwardCtx::eval();
        self.attend(q, k, v, kv_mask, causal, false, &mut ctx, 0.0)
    }

    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        q: &Tensor<S>,
        k: &Tensor<S>,
        v: &Tensor<S>,
        kv_mask: &[bool],
        causal: bool,
        strict: bool,
        ctx: &mut ForwardCtx,
        dropout_p: f64,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
        if qs.len() != 3 || ks.len() != 3 || ks != vs || qs[0] != ks[0] || qs[2] != self.d || ks[2] != self.d {
            return Err(Error::dim(format!(
                "attention inputs q {qs:?}, k {ks:?}, v {vs:?} inconsistent with d = {}",
                self.d
            )));
        }
        let (b, lq, lk, h) = (qs[0], qs[1], ks[1], self.heads);
        let dh = self.d / h;
        if kv_mask.len() != b * lk {
            return Err(Error::dim(format!(
                "key mask has {} entries for [{b}, {lk}] keys",
                kv_mask.len()
            )));
        }

        let split = |x: Tensor<S>, l: usize| -> Result<Tensor<S>> {
            x.reshape(vec![b, l, h, dh])?.permute(&[0, 2, 1, 3])
        };
        let qh = split(self.query.forward(q)?, lq)?;
        let kh = self.key.forward(k)?.reshape(vec![b, lk, h, dh])?.permute(&[0, 2, 3, 1])?;
        let vh = split(self.value.forward(v)?, lk)?;

        let scores = qh.matmul(&kh)?.scale(1.0 / (dh as f64).sqrt());
        let mut mask = Vec::with_capacity(b * h * lq * lk);
        let mut row_has_key = vec![false; b * lq];
        for bi in 0..b {
            for _ in 0..h {
                for i in 0..lq {
                    for j in 0..lk {
                        let keep = kv_mask[bi * lk + j] && (!causal || j <= i);
                        row_has_key[bi * lq + i] |= keep;
                        mask.push(keep);
                    }
                }
            }
        }
        let weights = if strict {
            scores.softmax_lastdim(Some(&mask))?
        } else {
            scores.softmax_lastdim_or_zero(Some(&mask))?
        };
        let dropped = ctx.dropout(&weights, dropout_p)?;
        let merged = dropped
            .matmul(&vh)?
            .permute(&[0, 2, 1, 3])?
            .reshape(vec![b, lq, self.d])?;
        let mut out = self.output.forward(&merged)?;
        if row_has_key.iter().any(|&r| !r) {
            let keep = row_has_key
                .iter()
                .map(|&r| if r { S::one() } else { S::zero() })
                .collect();
            out = out.mul(&Tensor::new(vec![b, lq, 1], keep)?)?;
        }
        Ok((out, weights))
    }
}
