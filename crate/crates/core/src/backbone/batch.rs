use std::collections::HashSet;

use rand::Rng as _;

use crate::attention::{Domain, SequenceBatch};
use crate::data::{interleave, sample_negatives, SplitDataset};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-aligned per-domain batches plus the optional combined sequence.
#[derive(Debug, Clone)]
pub struct ModelInput<S: Scalar> {
    pub a: SequenceBatch<S>,
    pub b: SequenceBatch<S>,
    pub combined: Option<SequenceBatch<S>>,
}

impl<S: Scalar> ModelInput<S> {
    pub fn from_sequences(
        a: &[Vec<usize>],
        b: &[Vec<usize>],
        combined: Option<&[Vec<usize>]>,
        max_len: usize,
    ) -> Result<Self> {
        Ok(Self {
            a: SequenceBatch::from_sequences(a, max_len, Domain::A)?,
            b: SequenceBatch::from_sequences(b, max_len, Domain::B)?,
            combined: combined
                .map(|c| SequenceBatch::from_sequences(c, max_len, Domain::Combined))
                .transpose()?,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.a.batch
    }

    pub(crate) fn check(&self, needs_combined: bool) -> Result<()> {
        let b = self.a.batch;
        if self.b.batch != b || self.combined.as_ref().is_some_and(|c| c.batch != b) {
            return Err(Error::dim("domain batches are not row-aligned"));
        }
        if self.a.domain != Domain::A || self.b.domain != Domain::B {
            return Err(Error::Contract("input batches carry the wrong domain tags".into()));
        }
        if needs_combined && self.combined.is_none() {
            return Err(Error::Contract("model needs the combined sequence".into()));
        }
        Ok(())
    }
}

/// Candidate ids `[rows, per_row]`; `valid[r]` is false for rows without
/// a target in this domain.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub ids: Vec<usize>,
    pub per_row: usize,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct TrainBatch<S: Scalar> {
    pub input: ModelInput<S>,
    pub cand_a: CandidateSet,
    pub cand_b: CandidateSet,
}

/// Mean over valid rows of `softplus(-s_pos) + Σ softplus(s_neg)`, with the
/// positive in column 0 of `scores: [B, c]`. No valid rows gives 0.
pub fn sampled_bce<S: Scalar>(scores: &Tensor<S>, valid: &[bool]) -> Result<Tensor<S>> {
    let s = scores.shape();
    if s.len() != 2 || s[1] < 1 || valid.len() != s[0] {
        return Err(Error::dim(format!(
            "scores {s:?} with {} validity flags",
            valid.len()
        )));
    }
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid == 0 {
        return Ok(Tensor::scalar(S::zero()));
    }
    let (b, c) = (s[0], s[1]);
    let sign: Vec<S> = (0..b * c)
        .map(|i| if i % c == 0 { -S::one() } else { S::one() })
        .collect();
    let weight: Vec<S> = valid
        .iter()
        .map(|&v| if v { S::of(1.0 / n_valid as f64) } else { S::zero() })
        .collect();
    scores
        .mul(&Tensor::new(vec![b, c], sign)?)?
        .softplus()
        .mul(&Tensor::new(vec![b, 1], weight)?)
        .map(|t| t.sum())
}

/// One training batch with random-cut augmentation: for each user and
/// domain a cut `t` in `[1, n)` of the training sequence is drawn, the
/// prefix `train[..t]` is the input and `train[t]` the positive, scored
/// against `negatives` items outside the user's training sequence.
pub fn train_batch<S: Scalar>(
    ds: &SplitDataset,
    users: &[usize],
    negatives: usize,
    with_combined: bool,
    max_len: usize,
    rng: &mut Rng,
) -> Result<TrainBatch<S>> {
    let mut seqs: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
    let mut combined = Vec::new();
    let mut cands = [
        CandidateSet { ids: Vec::new(), per_row: 1 + negatives, valid: Vec::new() },
        CandidateSet { ids: Vec::new(), per_row: 1 + negatives, valid: Vec::new() },
    ];
    for &u in users {
        let user = ds
            .users
            .get(u)
            .ok_or_else(|| Error::Index(format!("user index {u} out of range")))?;
        let mut prefixes = Vec::with_capacity(2);
        for (slot, domain) in [Domain::A, Domain::B].into_iter().enumerate() {
            let train = user.train(domain);
            let n = train.len();
            let cut = if n >= 2 { rng.random_range(1..n) } else { n };
            let prefix = &train[..cut];
            seqs[slot].push(prefix.iter().map(|e| e.item).collect());
            prefixes.push(prefix);
            let set = &mut cands[slot];
            if cut < n {
                let positive = train[cut].item;
                let exclude: HashSet<usize> = train.iter().map(|e| e.item).collect();
                set.ids.push(positive);
                set.ids.extend(sample_negatives(ds.vocab(domain), &exclude, negatives, rng)?);
                set.valid.push(true);
            } else {
                set.ids.extend(std::iter::repeat_n(1, 1 + negatives));
                set.valid.push(false);
            }
        }
        if with_combined {
            combined.push(interleave(prefixes[0], prefixes[1], ds.vocab_a));
        }
    }
    let [sa, sb] = seqs;
    let [cand_a, cand_b] = cands;
    Ok(TrainBatch {
        input: ModelInput::from_sequences(&sa, &sb, with_combined.then_some(&combined[..]), max_len)?,
        cand_a,
        cand_b,
    })
}
