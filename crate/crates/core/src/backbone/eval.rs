use serde::{Deserialize, Serialize};

use super::{Model, ModelInput};
use crate::attention::{Domain, ForwardCtx};
use crate::data::{sample_negatives, Split, SplitDataset};
use crate::error::{Error, Result};
use crate::gca::{GcaProbe, StageProbes};
use crate::metrics::{auc, ndcg_at_k};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::no_grad;
use rand::Rng as _;

/// Probe accumulators for every GCA stage that fired, ordered by stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub stages: Vec<StageProbes>,
}

impl ProbeSet {
    pub fn stage_mut(&mut self, stage: usize) -> &mut StageProbes {
        let i = match self.stages.binary_search_by_key(&stage, |s| s.stage) {
            Ok(i) => i,
            Err(i) => {
                self.stages.insert(
                    i,
                    StageProbes {
                        stage,
                        ..Default::default()
                    },
                );
                i
            }
        };
        &mut self.stages[i]
    }

    /// Position-weighted pool of all stages for one domain.
    pub fn pooled(&self, domain: Domain) -> GcaProbe {
        let mut out = GcaProbe::default();
        for s in &self.stages {
            out.merge(if domain == Domain::A { &s.a } else { &s.b });
        }
        out
    }
}

/// Fixed candidate list for one user: the held-out item at `pos_*`, the
/// rest sampled outside the user's whole history in that domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub user: usize,
    pub cand_a: Vec<usize>,
    pub pos_a: usize,
    pub cand_b: Vec<usize>,
    pub pos_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub split: Split,
    pub rows: Vec<EvalRow>,
}

impl EvalSet {
    /// Candidates depend only on `(ds, split, negatives, seed)`, so every
    /// model evaluated with the same seed faces the same lists.
    pub fn build(ds: &SplitDataset, split: Split, negatives: usize, seed: u64) -> Result<Self> {
        let label = match split {
            Split::Val => "eval.val",
            Split::Test => "eval.test",
        };
        let mut rng = SeedStream::new(seed).rng(label);
        let mut rows = Vec::with_capacity(ds.users.len());
        for (i, user) in ds.users.iter().enumerate() {
            let mut pick = |domain: Domain| -> Result<(Vec<usize>, usize)> {
                let mut cands = sample_negatives(ds.vocab(domain), &user.history(domain), negatives, &mut rng)?;
                let pos = rng.random_range(0..=negatives);
                cands.insert(pos, user.target(split, domain));
                Ok((cands, pos))
            };
            let (cand_a, pos_a) = pick(Domain::A)?;
            let (cand_b, pos_b) = pick(Domain::B)?;
            rows.push(EvalRow {
                user: i,
                cand_a,
                pos_a,
                cand_b,
                pos_b,
            });
        }
        Ok(Self { split, rows })
    }
}

/// User-averaged ranking metrics of one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalResult {
    pub users: usize,
    pub ndcg1_a: f64,
    pub ndcg10_a: f64,
    pub auc_a: f64,
    pub ndcg1_b: f64,
    pub ndcg10_b: f64,
    pub auc_b: f64,
}

/// Scores every row of `set` in evaluation mode. Contexts are the training
/// sequences for validation and training plus validation items for test.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    ds: &SplitDataset,
    set: &EvalSet,
    batch_size: usize,
    mut probes: Option<&mut ProbeSet>,
) -> Result<EvalResult> {
    if set.rows.is_empty() {
        return Err(Error::EmptyDataset("evaluation set has no users".into()));
    }
    let batch_size = batch_size.max(1);
    let with_combined = model.cfg.combined_thread;
    let mut acc = EvalResult::default();
    let mut ctx = ForwardCtx::eval();
    no_grad(|| -> Result<()> {
        for chunk in set.rows.chunks(batch_size) {
            let mut a = Vec::with_capacity(chunk.len());
            let mut b = Vec::with_capacity(chunk.len());
            let mut c = Vec::new();
            for row in chunk {
                let user = &ds.users[row.user];
                a.push(user.context(set.split, Domain::A).iter().map(|e| e.item).collect());
                b.push(user.context(set.split, Domain::B).iter().map(|e| e.item).collect());
                if with_combined {
                    c.push(ds.combined_context(user, set.split));
                }
            }
            let input = ModelInput::from_sequences(&a, &b, with_combined.then_some(&c[..]), model.cfg.max_len)?;
            let (ra, rb) = model.forward(&input, &mut ctx, probes.as_deref_mut())?;
            for (domain, repr, batch) in [(Domain::A, &ra, &input.a), (Domain::B, &rb, &input.b)] {
                let ids: Vec<usize> = chunk
                    .iter()
                    .flat_map(|r| if domain == Domain::A { &r.cand_a } else { &r.cand_b })
                    .copied()
                    .collect();
                let scores = model.score_next_item(repr, batch, &ids, domain)?.to_f64_vec();
                let c = scores.len() / chunk.len();
                for (r, row) in chunk.iter().enumerate() {
                    let s = &scores[r * c..(r + 1) * c];
                    let pos = if domain == Domain::A { row.pos_a } else { row.pos_b };
                    let (n1, n10, au) = (ndcg_at_k(s, pos, 1)?, ndcg_at_k(s, pos, 10)?, auc(s, pos)?);
                    if domain == Domain::A {
                        acc.ndcg1_a += n1;
                        acc.ndcg10_a += n10;
                        acc.auc_a += au;
                    } else {
                        acc.ndcg1_b += n1;
                        acc.ndcg10_b += n10;
                        acc.auc_b += au;
                    }
                }
            }
        }
        Ok(())
    })?;
    let n = set.rows.len() as f64;
    Ok(EvalResult {
        users: set.rows.len(),
        ndcg1_a: acc.ndcg1_a / n,
        ndcg10_a: acc.ndcg10_a / n,
        auc_a: acc.auc_a / n,
        ndcg1_b: acc.ndcg1_b / n,
        ndcg10_b: acc.ndcg10_b / n,
        auc_b: acc.auc_b / n,
    })
}
