//! Multi-head attention, pre-LayerNorm encoder blocks and position
//! embeddings over padded, domain-tagged item sequences.

mod encoder;
mod layers;
mod mha;

use serde::{Deserialize, Serialize};

pub use encoder::{add_position_embedding, Encoder, EncoderBlock, PositionEmbedding};
pub use layers::{normal_tensor, uniform_tensor, FeedForward, ForwardCtx, LayerNorm, Linear, LAYERNORM_EPS};
pub use mha::MultiHeadAttention;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Item id reserved for padding.
pub const PAD: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
    Combined,
}

impl Domain {
    pub fn label(self) -> &'static str {
        match self {
            Domain::A => "a",
            Domain::B => "b",
            Domain::Combined => "ab",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d: usize,
    pub heads: usize,
    pub dropout_p: f64,
    pub max_len: usize,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden dim {} must be a positive multiple of heads {}",
                self.d, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} not in [0, 1)", self.dropout_p)));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        Ok(())
    }
}

/// A batch of right-padded item-id sequences from one domain.
///
/// `ids` and `mask` are `[batch, len]` row-major; `mask[i]` is true exactly
/// where `ids[i] != PAD`. `hidden`, when present, is `[batch, len, d]`.
#[derive(Debug, Clone)]
pub struct SequenceBatch<S: Scalar> {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
    pub domain: Domain,
    pub hidden: Option<Tensor<S>>,
}

impl<S: Scalar> SequenceBatch<S> {
    pub fn new(ids: Vec<usize>, batch: usize, len: usize, domain: Domain) -> Result<Self> {
        if ids.len() != batch * len {
            return Err(Error::dim(format!(
                "{} ids for a [{batch}, {len}] batch",
                ids.len()
            )));
        }
        let mask = ids.iter().map(|&i| i != PAD).collect();
        Ok(Self {
            ids,
            mask,
            batch,
            len,
            domain,
            hidden: None,
        })
    }

    /// Right-pads each sequence to the longest one. Sequences longer than
    /// `max_len` keep their most recent `max_len` items. An empty batch
    /// row (no items) yields a length-1 all-padding row.
    pub fn from_sequences(seqs: &[Vec<usize>], max_len: usize, domain: Domain) -> Result<Self> {
        if let Some(bad) = seqs.iter().flatten().find(|&&i| i == PAD) {
            return Err(Error::Index(format!("item id {bad} is reserved for padding")));
        }
        let len = seqs.iter().map(|s| s.len().min(max_len)).max().unwrap_or(0).max(1);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            let tail = &s[s.len().saturating_sub(max_len)..];
            ids.extend_from_slice(tail);
            ids.extend(std::iter::repeat_n(PAD, len - tail.len()));
        }
        Self::new(ids, seqs.len(), len, domain)
    }

    pub fn with_hidden(mut self, hidden: Tensor<S>) -> Result<Self> {
        self.set_hidden(hidden)?;
        Ok(self)
    }

    pub fn set_hidden(&mut self, hidden: Tensor<S>) -> Result<()> {
        let s = hidden.shape();
        if s.len() != 3 || s[0] != self.batch || s[1] != self.len {
            return Err(Error::dim(format!(
                "hidden {:?} does not match batch [{}, {}]",
                s, self.batch, self.len
            )));
        }
        self.hidden = Some(hidden);
        Ok(())
    }

    pub fn hidden(&self) -> Result<&Tensor<S>> {
        self.hidden
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{:?} batch has no hidden states", self.domain)))
    }

    /// `[batch, len, 1]` tensor of 0/1 validity weights.
    pub fn mask_tensor(&self) -> Tensor<S> {
        let data = self
            .mask
            .iter()
            .map(|&m| if m { S::one() } else { S::zero() })
            .collect();
        Tensor::new(vec![self.batch, self.len, 1], data).expect("mask shape")
    }

    /// Index of the last real item in each row, `None` for empty rows.
    pub fn last_positions(&self) -> Vec<Option<usize>> {
        (0..self.batch)
            .map(|b| (0..self.len).rev().find(|&i| self.mask[b * self.len + i]))
            .collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        (0..self.batch)
            .map(|b| self.mask[b * self.len..(b + 1) * self.len].iter().filter(|&&m| m).count())
            .collect()
    }
}

/// Representation at each row's last real position, `[batch, d]`.
/// Rows without any real item give the zero vector.
pub fn last_position<S: Scalar>(repr: &Tensor<S>, batch: &SequenceBatch<S>) -> Result<Tensor<S>> {
    let s = repr.shape();
    if s.len() != 3 || s[0] != batch.batch || s[1] != batch.len {
        return Err(Error::dim(format!(
            "representation {:?} does not match batch [{}, {}]",
            s, batch.batch, batch.len
        )));
    }
    let d = s[2];
    let last = batch.last_positions();
    let rows: Vec<usize> = last
        .iter()
        .enumerate()
        .map(|(b, p)| b * batch.len + p.unwrap_or(0))
        .collect();
    let flat = repr.reshape(vec![batch.batch * batch.len, d])?;
    let picked = flat.gather_rows(&rows, vec![batch.batch, d])?;
    if last.iter().all(Option::is_some) {
        return Ok(picked);
    }
    let keep: Vec<S> = last
        .iter()
        .map(|p| if p.is_some() { S::one() } else { S::zero() })
        .collect();
    picked.mul(&Tensor::new(vec![batch.batch, 1], keep)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_matches_mask() {
        let b = SequenceBatch::<f64>::from_sequences(&[vec![3, 4, 5], vec![7]], 10, Domain::A).unwrap();
        assert_eq!(b.len, 3);
        assert_eq!(b.ids, vec![3, 4, 5, 7, 0, 0]);
        assert_eq!(b.mask, vec![true, true, true, true, false, false]);
        assert_eq!(b.last_positions(), vec![Some(2), Some(0)]);
    }

    #[test]
    fn truncates_to_most_recent() {
        let b = SequenceBatch::<f64>::from_sequences(&[vec![1, 2, 3, 4]], 2, Domain::B).unwrap();
        assert_eq!(b.ids, vec![3, 4]);
    }

    #[test]
    fn empty_row_is_all_padding() {
        let b = SequenceBatch::<f64>::from_sequences(&[vec![], vec![]], 5, Domain::A).unwrap();
        assert_eq!(b.len, 1);
        assert_eq!(b.last_positions(), vec![None, None]);
    }

    #[test]
    fn last_position_picks_rows() {
        let b = SequenceBatch::<f64>::from_sequences(&[vec![1, 2], vec![3], vec![]], 5, Domain::A).unwrap();
        let repr = Tensor::<f64>::new(vec![3, 2, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(last_position(&repr, &b).unwrap().to_vec(), vec![2.0, 3.0, 0.0]);
    }

    #[test]
    fn config_requires_divisible_heads() {
        let cfg = AttentionConfig { d: 10, heads: 4, dropout_p: 0.0, max_len: 5 };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
