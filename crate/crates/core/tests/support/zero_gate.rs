//! Zero-gate reduction: with the gate's output layer at zero, a tanh gate
//! is identically zero, so GCA reduces to LayerNorm(query) (or the query
//! itself without LayerNorm).

#![allow(dead_code)]

use gcalab::attention::{Domain, ForwardCtx, SequenceBatch};
use gcalab::gca::{GateActivation, GcaBlock, GcaConfig};
use gcalab::param::ParamStore;
use gcalab::rng::Rng;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// Largest absolute difference between the GCA output and its reduction
/// over `instances` random blocks and inputs. Every parameter except the
/// gate's output layer is randomized, LayerNorm gain and bias included.
pub fn max_deviation(rng: &mut Rng, instances: usize, use_layernorm: bool) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let heads = rng.random_range(1..=3);
        let d = heads * rng.random_range(1..=4) + if heads == 1 { 1 } else { 0 };
        let cfg = GcaConfig {
            gate_activation: GateActivation::Tanh,
            use_layernorm,
            heads,
            gate_hidden: Some(rng.random_range(1..=8)),
            placements: vec![0],
            zero_init_gate: true,
            ..Default::default()
        };
        let mut store = ParamStore::<f64>::new();
        let block = GcaBlock::new(&mut store, "gca", rng, d, &cfg).unwrap();
        for p in store.iter().filter(|p| !p.name.starts_with("gca.gate.w2")) {
            for v in p.tensor.data_mut().iter_mut() {
                *v = StandardNormal.sample(rng);
            }
        }
        let b = rng.random_range(1..=3);
        let mut seqs = |max: usize| -> Vec<Vec<usize>> {
            (0..b)
                .map(|_| (0..rng.random_range(1..=max)).map(|_| rng.random_range(1..50)).collect())
                .collect()
        };
        let (qs, ks) = (seqs(6), seqs(7));
        let mut hidden = |batch: SequenceBatch<f64>| {
            let n = batch.batch * batch.len * d;
            let h: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
            let t = gcalab::Tensor::new(vec![batch.batch, batch.len, d], h).unwrap();
            batch.with_hidden(t).unwrap()
        };
        let q = hidden(SequenceBatch::from_sequences(&qs, 16, Domain::A).unwrap());
        let k = hidden(SequenceBatch::from_sequences(&ks, 16, Domain::B).unwrap());
        let out = block.forward(&q, &k, &mut ForwardCtx::eval(), None).unwrap().to_vec();
        let expected = match &block.norm {
            Some(ln) => ln.forward(q.hidden().unwrap()).unwrap().to_vec(),
            None => q.hidden().unwrap().to_vec(),
        };
        for (a, e) in out.iter().zip(&expected) {
            worst = worst.max((a - e).abs());
        }
    }
    worst
}
