//! Gated cross-attention.
//!
//! For a query sequence `X_A` and a key/value sequence `X_B`,
//!
//! ```text
//! X_A' = CA(X_A, X_B)
//! g    = act(W2 relu(W1 [X_A; X_B] + b1) + b2)      (per position, per dim)
//! GCA  = LayerNorm(X_A + g ⊙ X_A')                  (LayerNorm optional)
//! ```
//!
//! `[X_A; X_B]` is position-aligned: the shorter sequence is right-padded
//! with zero rows to the longer length, and the gate is truncated back to
//! the query length.

use serde::{Deserialize, Serialize};

use crate::attention::{ForwardCtx, LayerNorm, Linear, MultiHeadAttention, SequenceBatch};
use crate::error::{Error, Result};
use crate::metrics::{cosine_probe_update, CosineAccumulator};
use crate::param::ParamStore;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateActivation {
    Sigmoid,
    Tanh,
}

impl GateActivation {
    pub fn label(self) -> &'static str {
        match self {
            GateActivation::Sigmoid => "sigmoid",
            GateActivation::Tanh => "tanh",
        }
    }
}

/// Where a GCA block reads its keys and values from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KvSource {
    /// `GCA_A` attends to `X_B` and `GCA_B` to `X_A`.
    Pairwise,
    /// Both attend to the combined sequence `X_{A+B}`.
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcaConfig {
    pub gate_activation: GateActivation,
    pub use_layernorm: bool,
    pub heads: usize,
    /// Width of the gate's hidden layer; `None` means the model width.
    pub gate_hidden: Option<usize>,
    pub placements: Vec<usize>,
    pub kv_source: KvSource,
    /// Start the gate's output layer at zero.
    pub zero_init_gate: bool,
}

impl Default for GcaConfig {
    fn default() -> Self {
        Self {
            gate_activation: GateActivation::Tanh,
            use_layernorm: true,
            heads: 4,
            gate_hidden: None,
            placements: Vec::new(),
            kv_source: KvSource::Combined,
            zero_init_gate: true,
        }
    }
}

impl GcaConfig {
    pub fn gate_width(&self, d: usize) -> usize {
        self.gate_hidden.unwrap_or(d)
    }

    /// `max_stage` is the deepest placement the host backbone offers.
    pub fn validate(&self, d: usize, max_stage: usize) -> Result<()> {
        if self.placements.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "placements {:?} must be sorted and unique",
                self.placements
            )));
        }
        if let Some(&p) = self.placements.iter().find(|&&p| p > max_stage) {
            return Err(Error::Config(format!(
                "placement {p} beyond the backbone's deepest stage {max_stage}"
            )));
        }
        if self.gate_hidden == Some(0) {
            return Err(Error::Config("gate_hidden must be >= 1".into()));
        }
        if !self.placements.is_empty() && (self.heads == 0 || !d.is_multiple_of(self.heads)) {
            return Err(Error::Config(format!(
                "hidden dim {d} not divisible by {} cross-attention heads",
                self.heads
            )));
        }
        Ok(())
    }

    /// Parameters of one GCA block at width `d`.
    pub fn block_param_count(&self, d: usize) -> usize {
        let h = self.gate_width(d);
        MultiHeadAttention::<f64>::param_count(d)
            + Linear::<f64>::param_count(2 * d, h, true)
            + Linear::<f64>::param_count(h, d, true)
            + if self.use_layernorm {
                LayerNorm::<f64>::param_count(d)
            } else {
                0
            }
    }

    /// Short tag such as `gca[0,1]-tanh-ln-h4`.
    pub fn label(&self) -> String {
        if self.placements.is_empty() {
            return "base".into();
        }
        let places: Vec<String> = self.placements.iter().map(|p| p.to_string()).collect();
        format!(
            "gca[{}]-{}-{}-h{}",
            places.join(","),
            self.gate_activation.label(),
            if self.use_layernorm { "ln" } else { "noln" },
            self.heads
        )
    }
}

/// Read-only observer of one GCA block: running means of
/// `|cos(X, X')|` and `|cos(X, Y)|`, weighted by counted positions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GcaProbe {
    pub xxprime: CosineAccumulator,
    pub xy: CosineAccumulator,
    pub batch_count: usize,
}

impl GcaProbe {
    pub fn cos_xxprime(&self) -> Option<f64> {
        self.xxprime.value()
    }

    pub fn cos_xy(&self) -> Option<f64> {
        self.xy.value()
    }

    pub fn merge(&mut self, other: &GcaProbe) {
        self.xxprime.merge(&other.xxprime);
        self.xy.merge(&other.xy);
        self.batch_count += other.batch_count;
    }
}

/// Right-pads the shorter of two `[B, l, d]` hidden states with zero rows
/// so both have length `max(l_a, l_b)`.
pub fn align_lengths<S: Scalar>(
    x_a: &SequenceBatch<S>,
    x_b: &SequenceBatch<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    if x_a.batch != x_b.batch {
        return Err(Error::dim(format!(
            "batch sizes differ: {} vs {}",
            x_a.batch, x_b.batch
        )));
    }
    let len = x_a.len.max(x_b.len);
    Ok((x_a.hidden()?.pad_axis(1, len)?, x_b.hidden()?.pad_axis(1, len)?))
}

/// Two-layer gate network producing dimension-wise gate values.
#[derive(Debug, Clone)]
pub struct GateFfn<S: Scalar> {
    pub hidden: Linear<S>,
    pub output: Linear<S>,
    pub activation: GateActivation,
}

impl<S: Scalar> GateFfn<S> {
    pub fn new(
        store: &mut ParamStore<S>,
        name: &str,
        rng: &mut Rng,
        d: usize,
        width: usize,
        activation: GateActivation,
        zero_init: bool,
    ) -> Result<Self> {
        let hidden = Linear::new(store, &format!("{name}.w1"), rng, 2 * d, width, true)?;
        let output = if zero_init {
            Linear::zeroed(store, &format!("{name}.w2"), width, d)?
        } else {
            Linear::new(store, &format!("{name}.w2"), rng, width, d, true)?
        };
        Ok(Self {
            hidden,
            output,
            activation,
        })
    }

    /// `x_a` and `x_b` must already share shape `[B, L, d]`.
    pub fn forward(&self, x_a: &Tensor<S>, x_b: &Tensor<S>) -> Result<Tensor<S>> {
        if x_a.shape() != x_b.shape() {
            return Err(Error::dim(format!(
                "gate inputs not length-aligned: {:?} vs {:?}",
                x_a.shape(),
                x_b.shape()
            )));
        }
        let pre = self
            .output
            .forward(&self.hidden.forward(&x_a.concat_lastdim(x_b)?)?.relu())?;
        Ok(match self.activation {
            GateActivation::Sigmoid => pre.sigmoid(),
            GateActivation::Tanh => pre.tanh(),
        })
    }
}

/// One gated cross-attention block.
#[derive(Debug, Clone)]
pub struct GcaBlock<S: Scalar> {
    pub cross: MultiHeadAttention<S>,
    pub gate: GateFfn<S>,
    pub norm: Option<LayerNorm<S>>,
}

/// Intermediate values of a GCA forward pass, for inspection.
#[derive(Debug, Clone)]
pub struct GcaTrace<S: Scalar> {
    pub attended: Tensor<S>,
    pub gate: Tensor<S>,
    pub output: Tensor<S>,
}

impl<S: Scalar> GcaBlock<S> {
    pub fn new(store: &mut ParamStore<S>, name: &str, rng: &mut Rng, d: usize, cfg: &GcaConfig) -> Result<Self> {
        Ok(Self {
            cross: MultiHeadAttention::new(store, &format!("{name}.ca"), rng, d, cfg.heads)?,
            gate: GateFfn::new(
                store,
                &format!("{name}.gate"),
                rng,
                d,
                cfg.gate_width(d),
                cfg.gate_activation,
                cfg.zero_init_gate,
            )?,
            norm: if cfg.use_layernorm {
                Some(LayerNorm::new(store, &format!("{name}.ln"), d)?)
            } else {
                None
            },
        })
    }

    /// `GCA(X_A, X_kv)` with output shape `[B, l_a, d]`. When `probe` is
    /// given it accumulates `|cos(X_A, X_A')|` over real query positions and
    /// `|cos(X_A, X_kv)|` over the common prefix of both sequences.
    pub fn forward(
        &self,
        query: &SequenceBatch<S>,
        kv: &SequenceBatch<S>,
        ctx: &mut ForwardCtx,
        probe: Option<&mut GcaProbe>,
    ) -> Result<Tensor<S>> {
        let trace = self.trace(query, kv, ctx)?;
        if let Some(p) = probe {
            observe(p, query, kv, &trace.attended)?;
        }
        Ok(trace.output)
    }

    pub fn trace(
        &self,
        query: &SequenceBatch<S>,
        kv: &SequenceBatch<S>,
        ctx: &mut ForwardCtx,
    ) -> Result<GcaTrace<S>> {
        let xa = query.hidden()?;
        let xkv = kv.hidden()?;
        let attended = self.cross.forward_lenient(xa, xkv, xkv, &kv.mask, false, ctx, 0.0)?;
        let (qa, kva) = align_lengths(query, kv)?;
        let gate = self.gate.forward(&qa, &kva)?.narrow(1, 0, query.len)?;
        let merged = xa.add(&gate.mul(&attended)?)?;
        let output = match &self.norm {
            Some(ln) => ln.forward(&merged)?,
            None => merged,
        };
        Ok(GcaTrace {
            attended,
            gate,
            output,
        })
    }
}

fn observe<S: Scalar>(
    probe: &mut GcaProbe,
    query: &SequenceBatch<S>,
    kv: &SequenceBatch<S>,
    attended: &Tensor<S>,
) -> Result<()> {
    let xa = query.hidden()?;
    cosine_probe_update(&mut probe.xxprime, xa, attended, &query.mask)?;

    let common = query.len.min(kv.len);
    let d = xa.last_dim();
    let (qa, ka) = (xa.to_f64_vec(), kv.hidden()?.to_f64_vec());
    let mut xs = Vec::with_capacity(query.batch * common * d);
    let mut ys = Vec::with_capacity(query.batch * common * d);
    let mut mask = Vec::with_capacity(query.batch * common);
    for b in 0..query.batch {
        for i in 0..common {
            let (qi, ki) = (b * query.len + i, b * kv.len + i);
            xs.extend_from_slice(&qa[qi * d..(qi + 1) * d]);
            ys.extend_from_slice(&ka[ki * d..(ki + 1) * d]);
            mask.push(query.mask[qi] && kv.mask[ki]);
        }
    }
    probe.xy.update(&xs, &ys, d, &mask)?;
    probe.batch_count += 1;
    Ok(())
}

/// The parallel pair `GCA_A[n]`, `GCA_B[n]` installed at one stage.
#[derive(Debug, Clone)]
pub struct GcaPair<S: Scalar> {
    pub stage: usize,
    pub a: GcaBlock<S>,
    pub b: GcaBlock<S>,
}

/// Probes of one stage, one per domain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageProbes {
    pub stage: usize,
    pub a: GcaProbe,
    pub b: GcaProbe,
}

impl<S: Scalar> GcaPair<S> {
    pub fn new(store: &mut ParamStore<S>, rng: &mut Rng, stage: usize, d: usize, cfg: &GcaConfig) -> Result<Self> {
        Ok(Self {
            stage,
            a: GcaBlock::new(store, &format!("gca.{stage}.a"), rng, d, cfg)?,
            b: GcaBlock::new(store, &format!("gca.{stage}.b"), rng, d, cfg)?,
        })
    }

    /// Updates `x_a` and `x_b` in parallel (both blocks see the inputs as
    /// they were before this stage). For pairwise wiring `combined` is
    /// ignored; for combined wiring it supplies keys and values.
    pub fn forward(
        &self,
        x_a: &SequenceBatch<S>,
        x_b: &SequenceBatch<S>,
        combined: Option<&SequenceBatch<S>>,
        kv_source: KvSource,
        ctx: &mut ForwardCtx,
        probes: Option<&mut StageProbes>,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let (kv_a, kv_b) = match kv_source {
            KvSource::Pairwise => (x_b, x_a),
            KvSource::Combined => {
                let c = combined.ok_or_else(|| {
                    Error::Config("combined kv source requires the combined thread".into())
                })?;
                (c, c)
            }
        };
        let (pa, pb) = match probes {
            Some(p) => {
                p.stage = self.stage;
                (Some(&mut p.a), Some(&mut p.b))
            }
            None => (None, None),
        };
        let ya = self.a.forward(x_a, kv_a, ctx, pa)?;
        let yb = self.b.forward(x_b, kv_b, ctx, pb)?;
        Ok((ya, yb))
    }
}

/// Builds the GCA pairs for every configured placement.
pub fn apply_placements<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut Rng,
    d: usize,
    cfg: &GcaConfig,
    max_stage: usize,
) -> Result<Vec<GcaPair<S>>> {
    cfg.validate(d, max_stage)?;
    cfg.placements
        .iter()
        .map(|&n| GcaPair::new(store, rng, n, d, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{normal_tensor, Domain};
    use rand::SeedableRng;

    fn batch(seqs: &[Vec<usize>], d: usize, rng: &mut Rng) -> SequenceBatch<f64> {
        let b = SequenceBatch::from_sequences(seqs, 16, Domain::A).unwrap();
        let h = normal_tensor(rng, vec![b.batch, b.len, d], 1.0);
        b.with_hidden(h).unwrap()
    }

    #[test]
    fn align_pads_shorter() {
        let mut rng = Rng::seed_from_u64(1);
        let a = batch(&[vec![1, 2, 3]], 4, &mut rng);
        let b = batch(&[vec![5]], 4, &mut rng);
        let (pa, pb) = align_lengths(&a, &b).unwrap();
        assert_eq!(pa.shape(), &[1, 3, 4]);
        assert_eq!(pa.to_vec(), a.hidden().unwrap().to_vec());
        assert_eq!(pb.shape(), &[1, 3, 4]);
        assert_eq!(&pb.to_vec()[4..], &[0.0; 8]);
        assert_eq!(&pb.to_vec()[..4], &b.hidden().unwrap().to_vec()[..]);
    }

    #[test]
    fn align_rejects_batch_mismatch() {
        let mut rng = Rng::seed_from_u64(1);
        let a = batch(&[vec![1], vec![2]], 4, &mut rng);
        let b = batch(&[vec![5]], 4, &mut rng);
        assert!(matches!(align_lengths(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn validation() {
        let mut cfg = GcaConfig {
            placements: vec![1, 0],
            ..Default::default()
        };
        assert!(cfg.validate(8, 2).is_err());
        cfg.placements = vec![0, 3];
        assert!(cfg.validate(8, 2).is_err());
        cfg.placements = vec![0, 2];
        assert!(cfg.validate(8, 2).is_ok());
        cfg.gate_hidden = Some(0);
        assert!(cfg.validate(8, 2).is_err());
    }

    #[test]
    fn labels() {
        let cfg = GcaConfig {
            placements: vec![0, 1],
            gate_activation: GateActivation::Sigmoid,
            ..Default::default()
        };
        assert_eq!(cfg.label(), "gca[0,1]-sigmoid-ln-h4");
        assert_eq!(GcaConfig::default().label(), "base");
    }
}
