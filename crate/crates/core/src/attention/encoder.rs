use super::layers::{normal_tensor, FeedForward, ForwardCtx, LayerNorm};
use super::mha::MultiHeadAttention;
use super::{AttentionConfig, SequenceBatch};
use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pre-LayerNorm self-attention block:
/// `h = x + MHA(LN(x))`, `y = h + FFN(LN(h))`, padding rows zeroed.
#[derive(Debug, Clone)]
pub struct EncoderBlock<S: Scalar> {
    pub ln_attn: LayerNorm<S>,
    pub attn: MultiHeadAttention<S>,
    pub ln_ffn: LayerNorm<S>,
    pub ffn: FeedForward<S>,
    pub dropout_p: f64,
}

impl<S: Scalar> EncoderBlock<S> {
    pub fn new(
        store: &mut ParamStore<S>,
        name: &str,
        rng: &mut Rng,
        cfg: &AttentionConfig,
        ffn_hidden: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln1"), cfg.d)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), rng, cfg.d, cfg.heads)?,
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln2"), cfg.d)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), rng, cfg.d, ffn_hidden)?,
            dropout_p: cfg.dropout_p,
        })
    }

    pub fn param_count(d: usize, ffn_hidden: usize) -> usize {
        2 * LayerNorm::<S>::param_count(d)
            + MultiHeadAttention::<S>::param_count(d)
            + FeedForward::<S>::param_count(d, ffn_hidden)
    }

    /// Causal self-attention over `x.hidden`.
    pub fn forward(&self, x: &SequenceBatch<S>, ctx: &mut ForwardCtx) -> Result<Tensor<S>> {
        let h0 = x.hidden()?;
        let normed = self.ln_attn.forward(h0)?;
        let attended = self.attn.forward_lenient(
            &normed,
            &normed,
            &normed,
            &x.mask,
            true,
            ctx,
            self.dropout_p,
        )?;
        let h1 = h0.add(&ctx.dropout(&attended, self.dropout_p)?)?;
        let ff = self.ffn.forward(&self.ln_ffn.forward(&h1)?)?;
        let h2 = h1.add(&ctx.dropout(&ff, self.dropout_p)?)?;
        h2.mul(&x.mask_tensor())
    }
}

/// Stack of encoder blocks followed by a final LayerNorm.
#[derive(Debug, Clone)]
pub struct Encoder<S: Scalar> {
    pub blocks: Vec<EncoderBlock<S>>,
    pub final_ln: LayerNorm<S>,
}

impl<S: Scalar> Encoder<S> {
    pub fn new(
        store: &mut ParamStore<S>,
        name: &str,
        rng: &mut Rng,
        cfg: &AttentionConfig,
        layers: usize,
        ffn_hidden: usize,
    ) -> Result<Self> {
        let blocks = (0..layers)
            .map(|i| EncoderBlock::new(store, &format!("{name}.block{i}"), rng, cfg, ffn_hidden))
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            final_ln: LayerNorm::new(store, &format!("{name}.ln_out"), cfg.d)?,
        })
    }

    pub fn param_count(d: usize, layers: usize, ffn_hidden: usize) -> usize {
        layers * EncoderBlock::<S>::param_count(d, ffn_hidden) + LayerNorm::<S>::param_count(d)
    }

    pub fn forward(&self, x: &SequenceBatch<S>, ctx: &mut ForwardCtx) -> Result<Tensor<S>> {
        let mut cur = x.clone();
        for block in &self.blocks {
            let h = block.forward(&cur, ctx)?;
            cur.set_hidden(h)?;
        }
        self.final_ln.forward(cur.hidden()?)?.mul(&x.mask_tensor())
    }
}

/// Learned absolute position vectors, `[max_len, d]`.
#[derive(Debug, Clone)]
pub struct PositionEmbedding<S: Scalar> {
    pub table: Tensor<S>,
}

impl<S: Scalar> PositionEmbedding<S> {
    pub fn new(store: &mut ParamStore<S>, name: &str, rng: &mut Rng, max_len: usize, d: usize, std: f64) -> Result<Self> {
        Ok(Self {
            table: store.register(name, normal_tensor::<S>(rng, vec![max_len, d], std).with_requires_grad(true))?,
        })
    }

    pub fn forward(&self, x: &SequenceBatch<S>) -> Result<Tensor<S>> {
        add_position_embedding(x, &self.table)
    }
}

/// Adds `table[i]` at every real position `i`; padding rows are untouched.
pub fn add_position_embedding<S: Scalar>(x: &SequenceBatch<S>, table: &Tensor<S>) -> Result<Tensor<S>> {
    let hidden = x.hidden()?;
    let ts = table.shape();
    if ts.len() != 2 || ts[1] != hidden.shape()[2] {
        return Err(Error::dim(format!(
            "position table {ts:?} does not match hidden {:?}",
            hidden.shape()
        )));
    }
    if x.len > ts[0] {
        return Err(Error::dim(format!(
            "sequence length {} exceeds max_len {}",
            x.len, ts[0]
        )));
    }
    let pos = table.narrow(0, 0, x.len)?;
    hidden.add(&pos.mul(&x.mask_tensor())?)
}
