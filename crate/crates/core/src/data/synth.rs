//! Latent-factor generator of two-domain interaction logs.
//!
//! Each user has an interest vector per domain, `u_A = z1` and
//! `u_B = ρ z1 + sqrt(1 - ρ²) z2` with `z1, z2 ~ N(0, I)`, so every
//! coordinate pair has correlation `ρ = cross_corr`. Items carry latent
//! vectors `v ~ N(0, I / k)`. A user's sequence in a domain is a draw
//! without replacement from `softmax(temperature · <u, v>)`; the two
//! domain sequences are then interleaved in random order on one clock.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::log::{Interaction, InteractionLog};
use crate::attention::Domain;
use crate::error::{Error, Result};
use crate::rng::{Rng, SeedStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub users: usize,
    pub items_per_domain: usize,
    pub cross_corr: f64,
    /// Inclusive range of per-domain sequence lengths.
    pub seq_len_range: (usize, usize),
    pub seed: u64,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_latent_dim() -> usize {
    8
}

fn default_temperature() -> f64 {
    3.0
}

impl SynthSpec {
    pub fn new(users: usize, items_per_domain: usize, cross_corr: f64, seq_len_range: (usize, usize), seed: u64) -> Self {
        Self {
            users,
            items_per_domain,
            cross_corr,
            seq_len_range,
            seed,
            latent_dim: default_latent_dim(),
            temperature: default_temperature(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.seq_len_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid seq_len_range ({lo}, {hi})")));
        }
        if self.items_per_domain < hi {
            return Err(Error::Config(format!(
                "items_per_domain {} is smaller than the longest sequence {hi}",
                self.items_per_domain
            )));
        }
        if !(0.0..=1.0).contains(&self.cross_corr) {
            return Err(Error::Config(format!("cross_corr {} not in [0, 1]", self.cross_corr)));
        }
        if self.users == 0 || self.latent_dim == 0 {
            return Err(Error::Config("users and latent_dim must be positive".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::Config(format!("temperature {} invalid", self.temperature)));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Per-user interest vectors `(u_A, u_B)`.
pub fn latent_interests(spec: &SynthSpec) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    spec.validate()?;
    let mut rng = SeedStream::new(spec.seed).rng("users");
    let rho = spec.cross_corr;
    let resid = (1.0 - rho * rho).max(0.0).sqrt();
    Ok((0..spec.users)
        .map(|_| {
            let z1 = gaussian(&mut rng, spec.latent_dim);
            let z2 = gaussian(&mut rng, spec.latent_dim);
            let ub = z1.iter().zip(&z2).map(|(a, b)| rho * a + resid * b).collect();
            (z1, ub)
        })
        .collect())
}

/// Draws `n` items without replacement with probabilities proportional to
/// `exp(logit)` (Gumbel top-n, which matches sequential softmax draws).
fn plackett_luce(logits: &[f64], n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (l - (-u.ln()).ln(), i)
        })
        .collect();
    keyed.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    keyed.into_iter().take(n).map(|(_, i)| i + 1).collect()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<InteractionLog> {
    let interests = latent_interests(spec)?;
    let stream = SeedStream::new(spec.seed);
    let k = spec.latent_dim;
    let mut item_rng = stream.rng("items");
    let scale = 1.0 / (k as f64).sqrt();
    let mut items = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| gaussian(&mut item_rng, k).into_iter().map(|v| v * scale).collect())
            .collect()
    };
    let items_a = items(spec.items_per_domain);
    let items_b = items(spec.items_per_domain);

    let mut rng = stream.rng("sequences");
    let (lo, hi) = spec.seq_len_range;
    let mut rows = Vec::new();
    for (user, (ua, ub)) in interests.iter().enumerate() {
        let logits = |u: &[f64], table: &[Vec<f64>]| -> Vec<f64> {
            table
                .iter()
                .map(|v| spec.temperature * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
                .collect()
        };
        let na = rng.random_range(lo..=hi);
        let nb = rng.random_range(lo..=hi);
        let seq_a = plackett_luce(&logits(ua, &items_a), na, &mut rng);
        let seq_b = plackett_luce(&logits(ub, &items_b), nb, &mut rng);
        let mut order: Vec<Domain> = std::iter::repeat_n(Domain::A, na)
            .chain(std::iter::repeat_n(Domain::B, nb))
            .collect();
        order.shuffle(&mut rng);
        let (mut ia, mut ib) = (seq_a.into_iter(), seq_b.into_iter());
        for (t, d) in order.into_iter().enumerate() {
            let item = match d {
                Domain::A => ia.next(),
                _ => ib.next(),
            }
            .expect("one item per slot");
            rows.push(Interaction {
                user,
                item,
                domain: d,
                timestamp: t as u64 + 1,
            });
        }
    }
    Ok(InteractionLog {
        rows,
        vocab_a: spec.items_per_domain,
        vocab_b: spec.items_per_domain,
    })
}
