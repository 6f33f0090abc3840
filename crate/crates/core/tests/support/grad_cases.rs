//! Randomized finite-difference cases, one constructor per differentiable
//! operation. Each call draws a fresh random shape from the supplied rng.

#![allow(dead_code)]

use gcalab::attention::{Domain, EncoderBlock, FeedForward, ForwardCtx, Linear, MultiHeadAttention, SequenceBatch};
use gcalab::backbone::{sampled_bce, AdapterKind, LowRankAdapter};
use gcalab::gca::{GateActivation, GcaBlock, GcaConfig};
use gcalab::gradcheck::{check_gradients, GradCheckReport};
use gcalab::param::ParamStore;
use gcalab::rng::Rng;
use gcalab::tensor::Tensor;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SHAPES_PER_OP: usize = 20;

pub type Case = fn(&mut Rng) -> GradCheckReport;

fn normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn param(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::param(shape.to_vec(), normals(rng, n)).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn param_off_zero(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..2.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::param(shape.to_vec(), v).unwrap()
}

fn dims(rng: &mut Rng, rank: usize, hi: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=hi)).collect()
}

fn dims_in(rng: &mut Rng, ranks: std::ops::RangeInclusive<usize>, hi: usize) -> Vec<usize> {
    let rank = rng.random_range(ranks);
    dims(rng, rank, hi)
}

/// `sum(y * w)` for fixed random `w`, so every output element carries a
/// distinct weight.
fn weighted(y: &Tensor<f64>, w: &[f64]) -> gcalab::Result<Tensor<f64>> {
    y.mul(&Tensor::new(y.shape().to_vec(), w.to_vec())?).map(|t| t.sum())
}

fn check<F>(inputs: &[Tensor<f64>], rng: &mut Rng, f: F) -> GradCheckReport
where
    F: Fn() -> gcalab::Result<Tensor<f64>>,
{
    let n = gcalab::tensor::no_grad(|| f().unwrap().numel());
    let w = normals(rng, n);
    check_gradients(inputs, H, || weighted(&f()?, &w)).unwrap()
}

/// Gives every registered parameter random values, so zero-initialised
/// biases and gates still exercise their gradient paths.
fn randomize(store: &ParamStore<f64>, rng: &mut Rng, std: f64) -> Vec<Tensor<f64>> {
    store
        .iter()
        .map(|p| {
            let v = normals(rng, p.numel());
            p.tensor
                .data_mut()
                .iter_mut()
                .zip(v)
                .for_each(|(x, z)| *x = std * z);
            p.tensor.clone()
        })
        .collect()
}

fn random_batch(rng: &mut Rng, b: usize, max_len: usize, d: usize) -> (SequenceBatch<f64>, Tensor<f64>) {
    let seqs: Vec<Vec<usize>> = (0..b)
        .map(|_| {
            let n = rng.random_range(1..=max_len);
            (0..n).map(|_| rng.random_range(1..20)).collect()
        })
        .collect();
    let batch = SequenceBatch::from_sequences(&seqs, max_len, Domain::A).unwrap();
    let x = param(rng, &[batch.batch, batch.len, d]);
    (batch, x)
}

fn matmul(rng: &mut Rng) -> GradCheckReport {
    let (m, k, n) = (rng.random_range(1..=5), rng.random_range(1..=5), rng.random_range(1..=5));
    let lead: Vec<usize> = dims_in(rng, 0..=2, 3);
    let mut sa = lead.clone();
    sa.extend([m, k]);
    // b is either batched like a or a plain matrix broadcast over the batch.
    let sb = if rng.random::<bool>() {
        let mut s = lead.clone();
        s.extend([k, n]);
        s
    } else {
        vec![k, n]
    };
    let (a, b) = (param(rng, &sa), param(rng, &sb));
    check(&[a.clone(), b.clone()], rng, || a.matmul(&b))
}

/// Shape of a broadcast partner for `shape`, covering every layout the
/// binary kernels distinguish.
fn partner(rng: &mut Rng, shape: &[usize]) -> Vec<usize> {
    match rng.random_range(0..4) {
        0 => shape.to_vec(),
        1 => shape[shape.len() - 1..].to_vec(),
        2 => {
            let mut s = shape.to_vec();
            *s.last_mut().unwrap() = 1;
            s
        }
        _ => shape.iter().map(|&d| if rng.random::<bool>() { 1 } else { d }).collect(),
    }
}

fn binary(rng: &mut Rng, op: fn(&Tensor<f64>, &Tensor<f64>) -> gcalab::Result<Tensor<f64>>) -> GradCheckReport {
    let sa = dims_in(rng, 1..=3, 4);
    let sb = partner(rng, &sa);
    let (a, b) = (param(rng, &sa), param(rng, &sb));
    // Either operand may be the broadcast one.
    if rng.random::<bool>() {
        check(&[a.clone(), b.clone()], rng, || op(&a, &b))
    } else {
        check(&[a.clone(), b.clone()], rng, || op(&b, &a))
    }
}

fn add(rng: &mut Rng) -> GradCheckReport {
    binary(rng, |a, b| a.add(b))
}

fn sub(rng: &mut Rng) -> GradCheckReport {
    binary(rng, |a, b| a.sub(b))
}

fn mul(rng: &mut Rng) -> GradCheckReport {
    binary(rng, |a, b| a.mul(b))
}

fn unary(rng: &mut Rng, off_zero: bool, op: fn(&Tensor<f64>) -> Tensor<f64>) -> GradCheckReport {
    let s = dims_in(rng, 1..=3, 5);
    let x = if off_zero { param_off_zero(rng, &s) } else { param(rng, &s) };
    check(std::slice::from_ref(&x), rng, || Ok(op(&x)))
}

fn scale(rng: &mut Rng) -> GradCheckReport {
    let c: f64 = rng.random_range(-3.0..3.0);
    let s = dims(rng, 2, 5);
    let x = param(rng, &s);
    check(std::slice::from_ref(&x), rng, || Ok(x.scale(c).neg()))
}

fn sigmoid(rng: &mut Rng) -> GradCheckReport {
    unary(rng, false, |x| x.sigmoid())
}

fn tanh(rng: &mut Rng) -> GradCheckReport {
    unary(rng, false, |x| x.tanh())
}

fn relu(rng: &mut Rng) -> GradCheckReport {
    unary(rng, true, |x| x.relu())
}

fn softplus(rng: &mut Rng) -> GradCheckReport {
    unary(rng, false, |x| x.softplus())
}

fn reductions(rng: &mut Rng) -> GradCheckReport {
    let s = dims_in(rng, 1..=3, 5);
    let x = param(rng, &s);
    let which = rng.random_range(0..3);
    check(std::slice::from_ref(&x), rng, || {
        Ok(match which {
            0 => x.sum(),
            1 => x.mean(),
            _ => x.sum_lastdim(),
        })
    })
}

fn softmax(rng: &mut Rng) -> GradCheckReport {
    let s = dims_in(rng, 1..=3, 5);
    let d = *s.last().unwrap();
    let x = param(rng, &s);
    let n = x.numel();
    let use_mask = rng.random::<bool>();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.7).collect();
    for row in mask.chunks_mut(d) {
        let keep = rng.random_range(0..d);
        row[keep] = true;
    }
    check(std::slice::from_ref(&x), rng, || {
        x.softmax_lastdim(use_mask.then_some(&mask[..]))
    })
}

fn softmax_or_zero(rng: &mut Rng) -> GradCheckReport {
    let s = dims_in(rng, 2..=3, 5);
    let x = param(rng, &s);
    let mask: Vec<bool> = (0..x.numel()).map(|_| rng.random::<f64>() < 0.5).collect();
    check(std::slice::from_ref(&x), rng, || x.softmax_lastdim_or_zero(Some(&mask)))
}

fn layernorm(rng: &mut Rng) -> GradCheckReport {
    let mut s = dims_in(rng, 0..=2, 4);
    let d = rng.random_range(2..=6);
    s.push(d);
    let (x, g, b) = (param(rng, &s), param(rng, &[d]), param(rng, &[d]));
    check(&[x.clone(), g.clone(), b.clone()], rng, || x.layernorm(&g, &b, 1e-5))
}

fn reshape_permute(rng: &mut Rng) -> GradCheckReport {
    let s = dims(rng, 4, 3);
    let x = param(rng, &s);
    let mut axes = vec![0, 1, 2, 3];
    for i in (1..4).rev() {
        let j = rng.random_range(0..=i);
        axes.swap(i, j);
    }
    check(std::slice::from_ref(&x), rng, || {
        x.permute(&axes)?.reshape(vec![s[axes[0]] * s[axes[1]], s[axes[2]] * s[axes[3]]])
    })
}

fn transpose(rng: &mut Rng) -> GradCheckReport {
    let s = dims_in(rng, 2..=4, 4);
    let x = param(rng, &s);
    check(std::slice::from_ref(&x), rng, || x.transpose_last2())
}

fn concat(rng: &mut Rng) -> GradCheckReport {
    let s = dims_in(rng, 1..=3, 4);
    let axis = rng.random_range(0..s.len());
    let mut s2 = s.clone();
    s2[axis] = rng.random_range(1..=4);
    let (a, b) = (param(rng, &s), param(rng, &s2));
    let last = rng.random::<bool>() && axis == s.len() - 1;
    check(&[a.clone(), b.clone()], rng, || {
        if last { a.concat_lastdim(&b) } else { a.concat(&b, axis) }
    })
}

fn narrow_split_pad(rng: &mut Rng) -> GradCheckReport {
    let s = dims_in(rng, 1..=3, 5);
    let axis = rng.random_range(0..s.len());
    let start = rng.random_range(0..s[axis]);
    let len = rng.random_range(1..=s[axis] - start);
    let first = rng.random_range(0..=*s.last().unwrap());
    let extra = rng.random_range(0..3);
    let x = param(rng, &s);
    let which = rng.random_range(0..3);
    check(std::slice::from_ref(&x), rng, || match which {
        0 => x.narrow(axis, start, len),
        1 => {
            let (l, r) = x.split_lastdim(first)?;
            // Recombine with different weights so both halves matter.
            r.scale(2.0).concat_lastdim(&l)
        }
        _ => x.pad_axis(axis, s[axis] + extra),
    })
}

fn gather(rng: &mut Rng) -> GradCheckReport {
    let (rows, d) = (rng.random_range(1..=6), rng.random_range(1..=4));
    let table = param(rng, &[rows, d]);
    let (b, l) = (rng.random_range(1..=3), rng.random_range(1..=4));
    // Repeated ids exercise the scatter-add.
    let ids: Vec<usize> = (0..b * l).map(|_| rng.random_range(0..rows)).collect();
    let embed = rng.random::<bool>();
    check(std::slice::from_ref(&table), rng, || {
        if embed {
            table.embedding_gather(&ids, b, l)
        } else {
            table.gather_rows(&ids, vec![b * l, d])
        }
    })
}

fn linear_ffn(rng: &mut Rng) -> GradCheckReport {
    let (d, hidden) = (rng.random_range(1..=5), rng.random_range(1..=6));
    let mut store = ParamStore::new();
    let bias = rng.random::<bool>();
    let lin = Linear::new(&mut store, "lin", rng, d, hidden, bias).unwrap();
    let ffn = FeedForward::new(&mut store, "ffn", rng, hidden, d).unwrap();
    let mut inputs = randomize(&store, rng, 0.7);
    let shape = [rng.random_range(1..=3), rng.random_range(1..=3), d];
    let x = param(rng, &shape);
    inputs.push(x.clone());
    check(&inputs, rng, || ffn.forward(&lin.forward(&x)?))
}

fn attention(rng: &mut Rng) -> GradCheckReport {
    let heads = rng.random_range(1..=2);
    let d = heads * rng.random_range(1..=3);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "mha", rng, d, heads).unwrap();
    let mut inputs = randomize(&store, rng, 0.5);
    let b = rng.random_range(1..=2);
    let (q_batch, q) = random_batch(rng, b, 4, d);
    let (kv_batch, kv) = random_batch(rng, q_batch.batch, 4, d);
    inputs.extend([q.clone(), kv.clone()]);
    let causal = rng.random::<bool>();
    let (q, kv) = if causal { (q.clone(), q) } else { (q, kv) };
    let mask = if causal { q_batch.mask.clone() } else { kv_batch.mask.clone() };
    check(&inputs, rng, || {
        mha.forward_lenient(&q, &kv, &kv, &mask, causal, &mut ForwardCtx::eval(), 0.0)
    })
}

fn encoder_block(rng: &mut Rng) -> GradCheckReport {
    let heads = rng.random_range(1..=2);
    let d = heads * rng.random_range(1..=3).max(2 / heads);
    let cfg = gcalab::attention::AttentionConfig { d, heads, dropout_p: 0.0, max_len: 8 };
    let mut store = ParamStore::new();
    let hidden = rng.random_range(1..=6);
    let block = EncoderBlock::new(&mut store, "enc", rng, &cfg, hidden).unwrap();
    let mut inputs = randomize(&store, rng, 0.5);
    let b = rng.random_range(1..=2);
    let (batch, x) = random_batch(rng, b, 4, d);
    inputs.push(x.clone());
    check(&inputs, rng, || {
        block.forward(&batch.clone().with_hidden(x.clone())?, &mut ForwardCtx::eval())
    })
}

/// The complete GCA forward pass: cross-attention, gate network, gated
/// residual and optional LayerNorm, over random activation, LayerNorm and
/// length settings.
pub fn gca_forward(rng: &mut Rng) -> GradCheckReport {
    let heads = rng.random_range(1..=2);
    let d = heads * rng.random_range(1..=3).max(2 / heads);
    let cfg = GcaConfig {
        gate_activation: if rng.random::<bool>() { GateActivation::Tanh } else { GateActivation::Sigmoid },
        use_layernorm: rng.random::<bool>(),
        heads,
        gate_hidden: Some(rng.random_range(1..=5)),
        placements: vec![0],
        zero_init_gate: false,
        ..Default::default()
    };
    let mut store = ParamStore::new();
    let block = GcaBlock::new(&mut store, "gca", rng, d, &cfg).unwrap();
    let mut inputs = randomize(&store, rng, 0.5);
    let b = rng.random_range(1..=2);
    let (qb, xq) = random_batch(rng, b, 4, d);
    let (kb, xk) = random_batch(rng, b, 5, d);
    inputs.extend([xq.clone(), xk.clone()]);
    check(&inputs, rng, || {
        let q = qb.clone().with_hidden(xq.clone())?;
        let k = kb.clone().with_hidden(xk.clone())?;
        block.forward(&q, &k, &mut ForwardCtx::eval(), None)
    })
}

fn bce(rng: &mut Rng) -> GradCheckReport {
    let (b, c) = (rng.random_range(1..=4), rng.random_range(1..=5));
    let s = param(rng, &[b, c]);
    let mut valid: Vec<bool> = (0..b).map(|_| rng.random::<bool>()).collect();
    valid[0] = true;
    check(std::slice::from_ref(&s), rng, || sampled_bce(&s, &valid))
}

fn adapter(rng: &mut Rng) -> GradCheckReport {
    let d = rng.random_range(2..=5);
    let r = rng.random_range(1..d);
    let mut store = ParamStore::new();
    let kind = if rng.random::<bool>() { AdapterKind::Domain } else { AdapterKind::Invariant };
    let ad = LowRankAdapter::new(&mut store, "ad", rng, d, r, kind).unwrap();
    let mut inputs = randomize(&store, rng, 0.7);
    let shape = [rng.random_range(1..=3), d];
    let (x, src) = (param(rng, &shape), param(rng, &shape));
    inputs.extend([x.clone(), src.clone()]);
    check(&inputs, rng, || match kind {
        AdapterKind::Domain => ad.forward(&x, &x),
        AdapterKind::Invariant => ad.forward(&x, &src),
    })
}

/// Every differentiable operation and composite layer under test.
pub fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("matmul", matmul as Case),
        ("add", add),
        ("sub", sub),
        ("mul", mul),
        ("scale_neg", scale),
        ("sigmoid", sigmoid),
        ("tanh", tanh),
        ("relu", relu),
        ("softplus", softplus),
        ("sum_mean", reductions),
        ("softmax_lastdim", softmax),
        ("softmax_lastdim_or_zero", softmax_or_zero),
        ("layernorm", layernorm),
        ("reshape_permute", reshape_permute),
        ("transpose_last2", transpose),
        ("concat", concat),
        ("narrow_split_pad", narrow_split_pad),
        ("gather", gather),
        ("linear_ffn", linear_ffn),
        ("multi_head_attention", attention),
        ("encoder_block", encoder_block),
        ("gca_forward", gca_forward),
        ("sampled_bce", bce),
        ("low_rank_adapter", adapter),
    ]
}
