//! Dual-domain sequential recommenders with GCA insertion stages.
//!
//! Three wirings are supported through [`ModelConfig`]:
//!
//! * independent per-domain encoders, GCA stages between encoder blocks
//!   (stage `n` sits after `n` blocks, so stages run `0..=layers`), with
//!   keys and values taken pairwise from the other domain or from a
//!   combined thread;
//! * a shared encoder with low-rank adapters (`adapter_rank` set):
//!   `emb → [0] → dropout → [1] → Enc → X + DLORA(X) + ILORA(x_ab) → [2]`;
//! * either of the above with a frozen combined embedding table whose rows
//!   seed the per-domain tables.

mod batch;
mod checkpoint;
mod eval;

use serde::{Deserialize, Serialize};

pub use batch::{sampled_bce, train_batch, CandidateSet, ModelInput, TrainBatch};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use eval::{evaluate, EvalResult, EvalRow, EvalSet, ProbeSet};

use crate::attention::{
    add_position_embedding, last_position, normal_tensor, uniform_tensor, AttentionConfig, Domain, Encoder,
    ForwardCtx, SequenceBatch,
};
use crate::error::{Error, Result};
use crate::gca::{apply_placements, GcaConfig, GcaPair, KvSource};
use crate::param::ParamStore;
use crate::rng::{Rng, SeedStream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderSharing {
    Shared,
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_a: usize,
    pub vocab_b: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub encoder_sharing: EncoderSharing,
    pub combined_thread: bool,
    pub freeze_combined_embedding: bool,
    pub adapter_rank: Option<usize>,
    pub gca: GcaConfig,
    pub dropout_p: f64,
    pub max_len: usize,
    /// Encoder feed-forward width; `None` means `d`.
    pub ffn_hidden: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_a: 100,
            vocab_b: 100,
            d: 32,
            layers: 2,
            heads: 4,
            encoder_sharing: EncoderSharing::Independent,
            combined_thread: false,
            freeze_combined_embedding: false,
            adapter_rank: None,
            gca: GcaConfig::default(),
            dropout_p: 0.1,
            max_len: 20,
            ffn_hidden: None,
        }
    }
}

impl ModelConfig {
    pub fn ffn_width(&self) -> usize {
        self.ffn_hidden.unwrap_or(self.d)
    }

    /// Deepest GCA stage this wiring offers.
    pub fn max_stage(&self) -> usize {
        if self.adapter_rank.is_some() {
            2
        } else {
            self.layers
        }
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            d: self.d,
            heads: self.heads,
            dropout_p: self.dropout_p,
            max_len: self.max_len,
        }
    }

    fn encoder_count(&self) -> usize {
        match self.encoder_sharing {
            EncoderSharing::Shared => 1,
            EncoderSharing::Independent => 2 + usize::from(self.combined_thread),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_a == 0 || self.vocab_b == 0 {
            return Err(Error::Config("both vocabularies must be non-empty".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one encoder layer is required".into()));
        }
        if self.ffn_hidden == Some(0) {
            return Err(Error::Config("ffn_hidden must be >= 1".into()));
        }
        self.attention().validate()?;
        if self.d < 2 {
            return Err(Error::Config("hidden dim must be >= 2 for layer norm".into()));
        }
        self.gca.validate(self.d, self.max_stage())?;
        if !self.gca.placements.is_empty() && self.gca.kv_source == KvSource::Combined && !self.combined_thread {
            return Err(Error::Config(
                "kv_source = combined requires combined_thread = true".into(),
            ));
        }
        if self.freeze_combined_embedding && !self.combined_thread {
            return Err(Error::Config(
                "freeze_combined_embedding requires combined_thread = true".into(),
            ));
        }
        if let Some(r) = self.adapter_rank {
            if r == 0 || r >= self.d {
                return Err(Error::Config(format!(
                    "adapter_rank {r} must be in [1, d = {})",
                    self.d
                )));
            }
            if !self.combined_thread {
                return Err(Error::Config(
                    "adapters read the combined thread; set combined_thread = true".into(),
                ));
            }
        }
        Ok(())
    }

    /// Closed-form parameter count of the model this config builds.
    pub fn param_count(&self) -> usize {
        let d = self.d;
        let mut n = (self.vocab_a + 1) * d + (self.vocab_b + 1) * d + 2 * self.max_len * d;
        if self.combined_thread {
            n += (self.vocab_a + self.vocab_b + 1) * d + self.max_len * d + 2 * d;
        }
        n += self.encoder_count() * Encoder::<f64>::param_count(d, self.layers, self.ffn_width());
        n += self.gca.placements.len() * 2 * self.gca.block_param_count(d);
        if let Some(r) = self.adapter_rank {
            n += 4 * LowRankAdapter::<f64>::param_count(d, r);
        }
        n
    }

    /// Short human-readable label.
    pub fn label(&self) -> String {
        let wiring = match (self.adapter_rank, self.encoder_sharing) {
            (Some(r), _) => format!("adapt{r}"),
            (None, EncoderSharing::Shared) => "shared".into(),
            (None, EncoderSharing::Independent) => "indep".into(),
        };
        format!(
            "{wiring}{}-d{}-l{}-{}",
            if self.combined_thread { "+ab" } else { "" },
            self.d,
            self.layers,
            self.gca.label()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    /// `x + up(down(x))`.
    Domain,
    /// `x + up(down(x_combined))`.
    Invariant,
}

/// Rank-`r` residual adapter. `up` starts at zero, so a fresh adapter is
/// the identity.
#[derive(Debug, Clone)]
pub struct LowRankAdapter<S: Scalar> {
    pub down: Tensor<S>,
    pub up: Tensor<S>,
    pub kind: AdapterKind,
}

impl<S: Scalar> LowRankAdapter<S> {
    pub fn new(
        store: &mut ParamStore<S>,
        name: &str,
        rng: &mut Rng,
        d: usize,
        rank: usize,
        kind: AdapterKind,
    ) -> Result<Self> {
        let bound = 1.0 / (d as f64).sqrt();
        Ok(Self {
            down: store.register(
                format!("{name}.down"),
                uniform_tensor::<S>(rng, vec![d, rank], bound).with_requires_grad(true),
            )?,
            up: store.register(
                format!("{name}.up"),
                Tensor::zeros(vec![rank, d]).with_requires_grad(true),
            )?,
            kind,
        })
    }

    pub fn param_count(d: usize, rank: usize) -> usize {
        2 * d * rank
    }

    /// `up(down(source))`.
    pub fn delta(&self, source: &Tensor<S>) -> Result<Tensor<S>> {
        source.matmul(&self.down)?.matmul(&self.up)
    }

    /// `x + up(down(source))`; `source` must be `x` for domain adapters.
    pub fn forward(&self, x: &Tensor<S>, source: &Tensor<S>) -> Result<Tensor<S>> {
        if self.kind == AdapterKind::Domain && !x.ptr_eq(source) {
            return Err(Error::Contract("a domain adapter reads its own input".into()));
        }
        x.add(&self.delta(source)?)
    }
}

#[derive(Debug, Clone)]
struct Adapters<S: Scalar> {
    domain_a: LowRankAdapter<S>,
    domain_b: LowRankAdapter<S>,
    invariant_a: LowRankAdapter<S>,
    invariant_b: LowRankAdapter<S>,
}

#[derive(Debug, Clone)]
struct CombinedThread<S: Scalar> {
    table: Tensor<S>,
    tags: Tensor<S>,
    position: Tensor<S>,
}

/// Built model: parameters plus the handles the forward pass needs.
#[derive(Debug, Clone)]
pub struct Model<S: Scalar> {
    pub cfg: ModelConfig,
    pub store: ParamStore<S>,
    emb_a: Tensor<S>,
    emb_b: Tensor<S>,
    pos_a: Tensor<S>,
    pos_b: Tensor<S>,
    combined: Option<CombinedThread<S>>,
    /// One shared encoder, or `[A, B]` plus `AB` when the combined thread
    /// is on.
    encoders: Vec<Encoder<S>>,
    stages: Vec<GcaPair<S>>,
    adapters: Option<Adapters<S>>,
}

fn embedding_std(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

fn zero_padding_row<S: Scalar>(t: Tensor<S>) -> Tensor<S> {
    let d = t.last_dim();
    t.data_mut()[..d].iter_mut().for_each(|v| *v = S::zero());
    t
}

impl<S: Scalar> Model<S> {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeedStream::new(seed).rng("init");
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let d = cfg.d;
        let std = embedding_std(d);
        let (va, vb) = (cfg.vocab_a, cfg.vocab_b);

        let combined_table = cfg
            .combined_thread
            .then(|| zero_padding_row(normal_tensor::<S>(rng, vec![va + vb + 1, d], std)));
        let (table_a, table_b) = match (&combined_table, cfg.freeze_combined_embedding) {
            (Some(c), true) => {
                let rows = c.to_vec();
                let a = rows[..(va + 1) * d].to_vec();
                let mut b = vec![S::zero(); d];
                b.extend_from_slice(&rows[(va + 1) * d..]);
                (Tensor::new(vec![va + 1, d], a)?, Tensor::new(vec![vb + 1, d], b)?)
            }
            _ => (
                zero_padding_row(normal_tensor::<S>(rng, vec![va + 1, d], std)),
                zero_padding_row(normal_tensor::<S>(rng, vec![vb + 1, d], std)),
            ),
        };
        let emb_a = store.register("emb.a", table_a.with_requires_grad(true))?;
        let emb_b = store.register("emb.b", table_b.with_requires_grad(true))?;
        let pos_a = store.register(
            "pos.a",
            normal_tensor::<S>(rng, vec![cfg.max_len, d], std).with_requires_grad(true),
        )?;
        let pos_b = store.register(
            "pos.b",
            normal_tensor::<S>(rng, vec![cfg.max_len, d], std).with_requires_grad(true),
        )?;
        let combined = match combined_table {
            Some(t) => Some(CombinedThread {
                table: store.register("emb.ab", t.with_requires_grad(!cfg.freeze_combined_embedding))?,
                tags: store.register(
                    "tag.ab",
                    normal_tensor::<S>(rng, vec![2, d], std).with_requires_grad(true),
                )?,
                position: store.register(
                    "pos.ab",
                    normal_tensor::<S>(rng, vec![cfg.max_len, d], std).with_requires_grad(true),
                )?,
            }),
            None => None,
        };

        let att = cfg.attention();
        let ffn = cfg.ffn_width();
        let encoders = match cfg.encoder_sharing {
            EncoderSharing::Shared => vec![Encoder::new(&mut store, "enc", rng, &att, cfg.layers, ffn)?],
            EncoderSharing::Independent => {
                let mut names = vec!["enc.a", "enc.b"];
                if cfg.combined_thread {
                    names.push("enc.ab");
                }
                names
                    .into_iter()
                    .map(|n| Encoder::new(&mut store, n, rng, &att, cfg.layers, ffn))
                    .collect::<Result<_>>()?
            }
        };
        let stages = apply_placements(&mut store, rng, d, &cfg.gca, cfg.max_stage())?;
        let adapters = match cfg.adapter_rank {
            Some(r) => Some(Adapters {
                domain_a: LowRankAdapter::new(&mut store, "dlora.a", rng, d, r, AdapterKind::Domain)?,
                domain_b: LowRankAdapter::new(&mut store, "dlora.b", rng, d, r, AdapterKind::Domain)?,
                invariant_a: LowRankAdapter::new(&mut store, "ilora.a", rng, d, r, AdapterKind::Invariant)?,
                invariant_b: LowRankAdapter::new(&mut store, "ilora.b", rng, d, r, AdapterKind::Invariant)?,
            }),
            None => None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            store,
            emb_a,
            emb_b,
            pos_a,
            pos_b,
            combined,
            encoders,
            stages,
            adapters,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Input embedding table of a domain, `[vocab + 1, d]`; row 0 is padding.
    pub fn item_table(&self, domain: Domain) -> Result<&Tensor<S>> {
        match domain {
            Domain::A => Ok(&self.emb_a),
            Domain::B => Ok(&self.emb_b),
            Domain::Combined => self
                .combined
                .as_ref()
                .map(|c| &c.table)
                .ok_or_else(|| Error::Config("model has no combined thread".into())),
        }
    }

    /// The encoder used by a thread.
    fn encoder(&self, domain: Domain) -> &Encoder<S> {
        match (self.encoders.len(), domain) {
            (1, _) => &self.encoders[0],
            (_, Domain::A) => &self.encoders[0],
            (_, Domain::B) => &self.encoders[1],
            (_, Domain::Combined) => &self.encoders[2],
        }
    }

    /// Disables every adapter by zeroing its `up` projection.
    pub fn zero_adapters(&self) {
        if let Some(ad) = &self.adapters {
            for a in [&ad.domain_a, &ad.domain_b, &ad.invariant_a, &ad.invariant_b] {
                a.up.data_mut().iter_mut().for_each(|v| *v = S::zero());
            }
        }
    }

    fn embed(&self, batch: &SequenceBatch<S>) -> Result<SequenceBatch<S>> {
        let mask = batch.mask_tensor();
        let (table, pos) = match batch.domain {
            Domain::A => (&self.emb_a, &self.pos_a),
            Domain::B => (&self.emb_b, &self.pos_b),
            Domain::Combined => {
                let c = self
                    .combined
                    .as_ref()
                    .ok_or_else(|| Error::Config("model has no combined thread".into()))?;
                (&c.table, &c.position)
            }
        };
        let vocab = table.shape()[0] - 1;
        if let Some(&bad) = batch.ids.iter().find(|&&i| i > vocab) {
            return Err(Error::Index(format!(
                "item {bad} outside {:?} vocabulary of {vocab}",
                batch.domain
            )));
        }
        let mut h = table.embedding_gather(&batch.ids, batch.batch, batch.len)?.mul(&mask)?;
        if let (Domain::Combined, Some(c)) = (batch.domain, &self.combined) {
            let tag_ids: Vec<usize> = batch
                .ids
                .iter()
                .map(|&i| usize::from(i > self.cfg.vocab_a))
                .collect();
            let tags = c.tags.gather_rows(&tag_ids, vec![batch.batch, batch.len, self.cfg.d])?;
            h = h.add(&tags.mul(&mask)?)?;
        }
        let with_h = batch.clone().with_hidden(h)?;
        let h = add_position_embedding(&with_h, pos)?;
        with_h.with_hidden(h)
    }

    fn run_stage(
        &self,
        stage: usize,
        xa: &mut SequenceBatch<S>,
        xb: &mut SequenceBatch<S>,
        xc: Option<&SequenceBatch<S>>,
        ctx: &mut ForwardCtx,
        probes: &mut Option<&mut ProbeSet>,
    ) -> Result<()> {
        let Some(pair) = self.stages.iter().find(|p| p.stage == stage) else {
            return Ok(());
        };
        let slot = probes.as_deref_mut().map(|p| p.stage_mut(stage));
        let (ya, yb) = pair.forward(xa, xb, xc, self.cfg.gca.kv_source, ctx, slot)?;
        let ya = ya.mul(&xa.mask_tensor())?;
        let yb = yb.mul(&xb.mask_tensor())?;
        xa.set_hidden(ya)?;
        xb.set_hidden(yb)
    }

    fn dropout_all(
        &self,
        threads: [&mut SequenceBatch<S>; 2],
        xc: Option<&mut SequenceBatch<S>>,
        ctx: &mut ForwardCtx,
    ) -> Result<()> {
        for t in threads.into_iter().chain(xc) {
            let h = ctx.dropout(t.hidden()?, self.cfg.dropout_p)?;
            t.set_hidden(h)?;
        }
        Ok(())
    }

    /// Per-domain representations `([B, l_a, d], [B, l_b, d])`. Padding
    /// positions are zero. GCA probes, when given, accumulate per stage.
    pub fn forward(
        &self,
        input: &ModelInput<S>,
        ctx: &mut ForwardCtx,
        mut probes: Option<&mut ProbeSet>,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        input.check(self.cfg.combined_thread)?;
        let mut xa = self.embed(&input.a)?;
        let mut xb = self.embed(&input.b)?;
        let mut xc = match (&self.combined, &input.combined) {
            (Some(_), Some(c)) => Some(self.embed(c)?),
            _ => None,
        };

        if let Some(ad) = &self.adapters {
            self.run_stage(0, &mut xa, &mut xb, xc.as_ref(), ctx, &mut probes)?;
            self.dropout_all([&mut xa, &mut xb], xc.as_mut(), ctx)?;
            self.run_stage(1, &mut xa, &mut xb, xc.as_ref(), ctx, &mut probes)?;
            let xc = xc.expect("validated: adapters need the combined thread");
            let hc = self.encoder(Domain::Combined).forward(&xc, ctx)?;
            let hc_last = last_position(&hc, &xc)?;
            let hc_last = hc_last.reshape(vec![xc.batch, 1, self.cfg.d])?;
            for (x, dom, inv) in [
                (&mut xa, &ad.domain_a, &ad.invariant_a),
                (&mut xb, &ad.domain_b, &ad.invariant_b),
            ] {
                let h = self.encoder(x.domain).forward(x, ctx)?;
                let adapted = dom.forward(&h, &h)?;
                let shared = inv.delta(&hc_last)?.mul(&x.mask_tensor())?;
                x.set_hidden(adapted.add(&shared)?)?;
            }
            self.run_stage(2, &mut xa, &mut xb, Some(&xc), ctx, &mut probes)?;
            return Ok((xa.hidden()?.clone(), xb.hidden()?.clone()));
        }

        self.run_stage(0, &mut xa, &mut xb, xc.as_ref(), ctx, &mut probes)?;
        self.dropout_all([&mut xa, &mut xb], xc.as_mut(), ctx)?;
        let layers = self.cfg.layers;
        for l in 0..layers {
            for x in [Some(&mut xa), Some(&mut xb), xc.as_mut()].into_iter().flatten() {
                let enc = self.encoder(x.domain);
                let mut h = enc.blocks[l].forward(x, ctx)?;
                if l + 1 == layers {
                    h = enc.final_ln.forward(&h)?.mul(&x.mask_tensor())?;
                }
                x.set_hidden(h)?;
            }
            self.run_stage(l + 1, &mut xa, &mut xb, xc.as_ref(), ctx, &mut probes)?;
        }
        let (mut ra, mut rb) = (xa.hidden()?.clone(), xb.hidden()?.clone());
        if let Some(xc) = &xc {
            let c_last = last_position(xc.hidden()?, xc)?.reshape(vec![xc.batch, 1, self.cfg.d])?;
            ra = ra.add(&c_last.mul(&xa.mask_tensor())?)?;
            rb = rb.add(&c_last.mul(&xb.mask_tensor())?)?;
        }
        Ok((ra, rb))
    }

    /// Dot product of each row's last real representation with candidate
    /// item embeddings (tied with the input table). `candidates` is
    /// `[B, c]` row-major; the result is `[B, c]`.
    pub fn score_next_item(
        &self,
        repr: &Tensor<S>,
        batch: &SequenceBatch<S>,
        candidates: &[usize],
        domain: Domain,
    ) -> Result<Tensor<S>> {
        let b = batch.batch;
        if b == 0 || !candidates.len().is_multiple_of(b) {
            return Err(Error::dim(format!(
                "{} candidates do not split into {b} rows",
                candidates.len()
            )));
        }
        let c = candidates.len() / b;
        let table = self.item_table(domain)?;
        let vocab = table.shape()[0] - 1;
        if let Some(&bad) = candidates.iter().find(|&&i| i == 0 || i > vocab) {
            return Err(Error::Index(format!(
                "candidate {bad} outside {domain:?} vocabulary [1, {vocab}]"
            )));
        }
        let d = self.cfg.d;
        let user = last_position(repr, batch)?.reshape(vec![b, d, 1])?;
        let items = table.gather_rows(candidates, vec![b, c, d])?;
        items.matmul(&user)?.reshape(vec![b, c])
    }

    /// Sum over domains of the sampled binary cross-entropy at each row's
    /// final position; column 0 of every candidate row is the positive.
    pub fn training_loss(&self, batch: &TrainBatch<S>, ctx: &mut ForwardCtx) -> Result<Tensor<S>> {
        let (ra, rb) = self.forward(&batch.input, ctx, None)?;
        let sa = self.score_next_item(&ra, &batch.input.a, &batch.cand_a.ids, Domain::A)?;
        let sb = self.score_next_item(&rb, &batch.input.b, &batch.cand_b.ids, Domain::B)?;
        let loss = sampled_bce(&sa, &batch.cand_a.valid)?.add(&sampled_bce(&sb, &batch.cand_b.valid)?)?;
        let v = loss.item().as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss is {v} (batch of {} users)",
                batch.input.a.batch
            )));
        }
        Ok(loss)
    }

    /// Copy of every parameter's values, in registration order.
    pub fn snapshot(&self) -> Vec<Vec<S>> {
        self.store.iter().map(|p| p.tensor.to_vec()).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<S>]) -> Result<()> {
        if snapshot.len() != self.store.len() {
            return Err(Error::Contract(format!(
                "snapshot has {} arrays for {} parameters",
                snapshot.len(),
                self.store.len()
            )));
        }
        for (p, values) in self.store.iter().zip(snapshot) {
            if values.len() != p.numel() {
                return Err(Error::dim(format!("snapshot size mismatch for {}", p.name)));
            }
            p.tensor.data_mut().copy_from_slice(values);
        }
        Ok(())
    }
}
