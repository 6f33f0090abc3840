use gcalab::attention::{Domain, ForwardCtx};
use gcalab::backbone::{
    evaluate, load_checkpoint, save_checkpoint, train_batch, EncoderSharing, EvalSet, Model, ModelConfig,
    ModelInput, ProbeSet,
};
use gcalab::data::{generate_synthetic, split_leave_one_out, Split, SplitDataset, SynthSpec};
use gcalab::gca::{GateActivation, GcaConfig, KvSource};
use gcalab::optim::{Adam, AdamConfig};
use gcalab::rng::SeedStream;
use gcalab::Error;

fn small(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_a: vocab,
        vocab_b: vocab,
        d: 16,
        layers: 2,
        heads: 4,
        dropout_p: 0.0,
        max_len: 12,
        ..Default::default()
    }
}

fn with_gca(mut cfg: ModelConfig, placements: Vec<usize>, kv: KvSource) -> ModelConfig {
    cfg.gca = GcaConfig {
        placements,
        kv_source: kv,
        ..Default::default()
    };
    if kv == KvSource::Combined {
        cfg.combined_thread = true;
    }
    cfg
}

fn adapter_cfg(vocab: usize) -> ModelConfig {
    ModelConfig {
        encoder_sharing: EncoderSharing::Shared,
        combined_thread: true,
        adapter_rank: Some(4),
        ..small(vocab)
    }
}

fn dataset(users: usize, vocab: usize, seed: u64) -> SplitDataset {
    let log = generate_synthetic(&SynthSpec::new(users, vocab, 0.7, (4, 10), seed)).unwrap();
    split_leave_one_out(&log, 3).unwrap()
}

fn input(ds: &SplitDataset, combined: bool) -> ModelInput<f64> {
    let a: Vec<Vec<usize>> = ds.users.iter().map(|u| u.context(Split::Test, Domain::A).iter().map(|e| e.item).collect()).collect();
    let b: Vec<Vec<usize>> = ds.users.iter().map(|u| u.context(Split::Test, Domain::B).iter().map(|e| e.item).collect()).collect();
    let c: Vec<Vec<usize>> = ds.users.iter().map(|u| ds.combined_context(u, Split::Test)).collect();
    ModelInput::from_sequences(&a, &b, combined.then_some(&c[..]), 12).unwrap()
}

#[test]
fn same_seed_builds_identical_parameters() {
    let cfg = with_gca(small(30), vec![0, 2], KvSource::Pairwise);
    let m1 = Model::<f64>::build(&cfg, 7).unwrap();
    let m2 = Model::<f64>::build(&cfg, 7).unwrap();
    let m3 = Model::<f64>::build(&cfg, 8).unwrap();
    assert_eq!(m1.snapshot(), m2.snapshot());
    assert_ne!(m1.snapshot(), m3.snapshot());
}

#[test]
fn sharing_reduces_parameters() {
    let indep = small(30);
    let shared = ModelConfig { encoder_sharing: EncoderSharing::Shared, ..small(30) };
    let a = Model::<f64>::build(&indep, 0).unwrap().param_count();
    let b = Model::<f64>::build(&shared, 0).unwrap().param_count();
    assert!(b < a);
}

#[test]
fn counts_match_formula_and_placements_add_block_pairs() {
    let mut configs = vec![
        small(30),
        with_gca(small(30), vec![0], KvSource::Pairwise),
        with_gca(small(30), vec![0, 1, 2], KvSource::Combined),
        adapter_cfg(25),
        with_gca(adapter_cfg(25), vec![1, 2], KvSource::Combined),
        ModelConfig { freeze_combined_embedding: true, ..with_gca(small(40), vec![1], KvSource::Combined) },
    ];
    configs[1].gca.gate_hidden = Some(5);
    configs[2].gca.use_layernorm = false;
    for cfg in &configs {
        let m = Model::<f64>::build(cfg, 1).unwrap();
        assert_eq!(m.param_count(), cfg.param_count(), "{}", cfg.label());
        let base = ModelConfig { gca: GcaConfig { placements: vec![], ..cfg.gca.clone() }, ..cfg.clone() };
        let k = cfg.gca.placements.len();
        assert_eq!(cfg.param_count() - base.param_count(), k * 2 * cfg.gca.block_param_count(cfg.d));
    }
}

#[test]
fn invalid_combinations_are_config_errors() {
    let mut cfg = small(10);
    cfg.gca.placements = vec![0];
    cfg.gca.kv_source = KvSource::Combined;
    assert!(matches!(Model::<f64>::build(&cfg, 0), Err(Error::Config(_))));
    let cfg = ModelConfig { adapter_rank: Some(16), ..adapter_cfg(10) };
    assert!(matches!(Model::<f64>::build(&cfg, 0), Err(Error::Config(_))));
    let cfg = with_gca(small(10), vec![3], KvSource::Pairwise);
    assert!(matches!(Model::<f64>::build(&cfg, 0), Err(Error::Config(_))));
}

#[test]
fn output_shapes_and_stage_order() {
    let ds = dataset(12, 30, 3);
    for cfg in [
        small(30),
        with_gca(small(30), vec![0, 1, 2], KvSource::Pairwise),
        with_gca(small(30), vec![2], KvSource::Combined),
        with_gca(adapter_cfg(30), vec![0, 1, 2], KvSource::Combined),
    ] {
        let m = Model::<f64>::build(&cfg, 2).unwrap();
        let inp = input(&ds, cfg.combined_thread);
        let mut probes = ProbeSet::default();
        let (ra, rb) = m.forward(&inp, &mut ForwardCtx::eval(), Some(&mut probes)).unwrap();
        assert_eq!(ra.shape(), &[inp.a.batch, inp.a.len, cfg.d]);
        assert_eq!(rb.shape(), &[inp.b.batch, inp.b.len, cfg.d]);
        let stages: Vec<usize> = probes.stages.iter().map(|s| s.stage).collect();
        assert_eq!(stages, cfg.gca.placements);
        for s in &probes.stages {
            for v in [s.a.cos_xxprime(), s.a.cos_xy(), s.b.cos_xxprime(), s.b.cos_xy()] {
                let v = v.unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }
        let pad: Vec<bool> = inp.a.mask.iter().map(|m| !m).collect();
        let data = ra.to_vec();
        for (i, &p) in pad.iter().enumerate() {
            if p {
                assert!(data[i * cfg.d..(i + 1) * cfg.d].iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn placements_preserve_shapes() {
    let ds = dataset(10, 30, 4);
    let base = small(30);
    let mut gated = with_gca(small(30), vec![0, 1], KvSource::Pairwise);
    gated.gca.use_layernorm = false;
    let inp = input(&ds, false);
    let (a0, _) = Model::<f64>::build(&base, 5).unwrap().forward(&inp, &mut ForwardCtx::eval(), None).unwrap();
    let m = Model::<f64>::build(&gated, 5).unwrap();
    let (a1, _) = m.forward(&inp, &mut ForwardCtx::eval(), None).unwrap();
    assert_eq!(a0.shape(), a1.shape());
}

#[test]
fn zeroed_adapters_equal_plain_shared_encoder() {
    let ds = dataset(10, 30, 5);
    let cfg = adapter_cfg(30);
    let m = Model::<f64>::build(&cfg, 3).unwrap();
    let inp = input(&ds, true);
    let (ra, rb) = m.forward(&inp, &mut ForwardCtx::eval(), None).unwrap();
    // Perturb `down` so only the zero `up` keeps the adapters silent.
    for p in m.store.iter().filter(|p| p.name.ends_with(".down")) {
        p.tensor.data_mut().iter_mut().for_each(|v| *v += 0.5);
    }
    let (ra2, rb2) = m.forward(&inp, &mut ForwardCtx::eval(), None).unwrap();
    assert_eq!(ra.to_vec(), ra2.to_vec());
    assert_eq!(rb.to_vec(), rb2.to_vec());

    for p in m.store.iter().filter(|p| p.name.ends_with(".up")) {
        p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.25);
    }
    let (ra3, _) = m.forward(&inp, &mut ForwardCtx::eval(), None).unwrap();
    assert_ne!(ra.to_vec(), ra3.to_vec());
    m.zero_adapters();
    let (ra4, _) = m.forward(&inp, &mut ForwardCtx::eval(), None).unwrap();
    assert_eq!(ra.to_vec(), ra4.to_vec());
}

#[test]
fn frozen_combined_table_gets_no_gradient() {
    let ds = dataset(16, 30, 6);
    let cfg = ModelConfig { freeze_combined_embedding: true, ..with_gca(small(30), vec![1], KvSource::Combined) };
    let m = Model::<f64>::build(&cfg, 4).unwrap();
    let ab = m.store.get("emb.ab").unwrap().tensor.to_vec();
    let a = m.store.get("emb.a").unwrap().tensor.to_vec();
    assert_eq!(&ab[..a.len()], &a[..]);
    let users: Vec<usize> = (0..ds.users.len()).collect();
    let mut rng = SeedStream::new(1).rng("batch");
    let batch = train_batch(&ds, &users, 4, true, 12, &mut rng).unwrap();
    let loss = m.training_loss(&batch, &mut ForwardCtx::eval()).unwrap();
    loss.backward().unwrap();
    let g = m.store.get("emb.ab").unwrap().tensor.grad();
    assert!(g.is_none_or(|g| g.iter().all(|&v| v == 0.0)));
    assert!(m.store.get("emb.a").unwrap().tensor.grad().is_some());
    assert!(m.store.get("tag.ab").unwrap().tensor.grad().is_some());
}

#[test]
fn evaluation_forward_is_deterministic() {
    let ds = dataset(10, 30, 7);
    let cfg = ModelConfig { dropout_p: 0.3, ..with_gca(small(30), vec![0], KvSource::Pairwise) };
    let m = Model::<f64>::build(&cfg, 4).unwrap();
    let inp = input(&ds, false);
    let (a, b) = m.forward(&inp, &mut ForwardCtx::eval(), None).unwrap();
    let (a2, b2) = m.forward(&inp, &mut ForwardCtx::eval(), None).unwrap();
    assert_eq!(a.to_vec(), a2.to_vec());
    assert_eq!(b.to_vec(), b2.to_vec());
}

#[test]
fn scoring_matches_brute_force_dot_products() {
    let ds = dataset(6, 30, 8);
    let cfg = small(30);
    let m = Model::<f64>::build(&cfg, 9).unwrap();
    let inp = input(&ds, false);
    let (ra, _) = m.forward(&inp, &mut ForwardCtx::eval(), None).unwrap();
    let b = inp.a.batch;
    let all: Vec<usize> = (0..b).flat_map(|_| 1..=30).collect();
    let scores = m.score_next_item(&ra, &inp.a, &all, Domain::A).unwrap().to_vec();
    let table = m.item_table(Domain::A).unwrap().to_vec();
    let repr = ra.to_vec();
    let last = inp.a.last_positions();
    for r in 0..b {
        let p = last[r].unwrap();
        let u = &repr[(r * inp.a.len + p) * 16..(r * inp.a.len + p + 1) * 16];
        let brute: Vec<f64> = (1..=30).map(|i| table[i * 16..(i + 1) * 16].iter().zip(u).map(|(x, y)| x * y).sum()).collect();
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        let row = &scores[r * 30..(r + 1) * 30];
        assert_eq!(argmax(row), argmax(&brute));
        for (s, bf) in row.iter().zip(&brute) {
            assert!((s - bf).abs() < 1e-12);
        }
    }
    assert!(matches!(m.score_next_item(&ra, &inp.a, &vec![31; b], Domain::A), Err(Error::Index(_))));
}

#[test]
fn zero_embedding_scores_zero_and_padding_is_ignored() {
    let cfg = small(30);
    let m = Model::<f64>::build(&cfg, 9).unwrap();
    {
        let mut t = m.item_table(Domain::A).unwrap().data_mut();
        t[5 * 16..6 * 16].iter_mut().for_each(|v| *v = 0.0);
    }
    let short = ModelInput::<f64>::from_sequences(&[vec![1, 2, 3]], &[vec![4]], None, 12).unwrap();
    let long = ModelInput::<f64>::from_sequences(&[vec![1, 2, 3], vec![1, 2, 3, 4, 6, 7]], &[vec![4], vec![4]], None, 12).unwrap();
    let (rs, _) = m.forward(&short, &mut ForwardCtx::eval(), None).unwrap();
    let (rl, _) = m.forward(&long, &mut ForwardCtx::eval(), None).unwrap();
    let s = m.score_next_item(&rs, &short.a, &[5, 8, 9], Domain::A).unwrap().to_vec();
    let l = m.score_next_item(&rl, &long.a, &[5, 8, 9, 5, 8, 9], Domain::A).unwrap().to_vec();
    assert_eq!(s[0], 0.0);
    for i in 0..3 {
        assert!((s[i] - l[i]).abs() < 1e-12);
    }
}

#[test]
fn loss_decreases_on_small_synthetic_set() {
    let ds = dataset(64, 40, 10);
    let cfg = ModelConfig { dropout_p: 0.0, ..with_gca(small(40), vec![0], KvSource::Pairwise) };
    let m = Model::<f64>::build(&cfg, 11).unwrap();
    let mut opt = Adam::new(AdamConfig { lr: 5e-3, ..Default::default() }, m.store.as_slice());
    let users: Vec<usize> = (0..ds.users.len()).collect();
    let fixed = train_batch(&ds, &users, 4, false, 12, &mut SeedStream::new(2).rng("fixed")).unwrap();
    let mut ctx = ForwardCtx::eval();
    let start = m.training_loss(&fixed, &mut ctx).unwrap().item();
    for _ in 0..50 {
        m.store.zero_grad();
        let loss = m.training_loss(&fixed, &mut ctx).unwrap();
        loss.backward().unwrap();
        opt.step(m.store.as_slice()).unwrap();
    }
    let end = m.training_loss(&fixed, &mut ctx).unwrap().item();
    assert!(end < start, "loss {start} -> {end}");
}

#[test]
fn evaluation_metrics_are_in_range_and_probe_fires() {
    let ds = dataset(20, 150, 12);
    let cfg = with_gca(small(150), vec![1], KvSource::Pairwise);
    let m = Model::<f64>::build(&cfg, 13).unwrap();
    let set = EvalSet::build(&ds, Split::Test, 99, 0).unwrap();
    assert!(set.rows.iter().all(|r| r.cand_a.len() == 100 && r.cand_a[r.pos_a] == ds.users[r.user].target(Split::Test, Domain::A)));
    let mut probes = ProbeSet::default();
    let r = evaluate(&m, &ds, &set, 7, Some(&mut probes)).unwrap();
    for v in [r.ndcg1_a, r.ndcg10_a, r.auc_a, r.ndcg1_b, r.ndcg10_b, r.auc_b] {
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(probes.pooled(Domain::A).cos_xxprime().is_some());
    assert_eq!(EvalSet::build(&ds, Split::Test, 99, 0).unwrap(), set);
}

#[test]
fn checkpoint_round_trip() {
    let cfg = with_gca(small(20), vec![0], KvSource::Pairwise);
    let m = Model::<f64>::build(&cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ckpt");
    save_checkpoint(&m.store, serde_json::json!({"seed": 1}), &path).unwrap();
    let other = Model::<f64>::build(&cfg, 2).unwrap();
    let meta = load_checkpoint(&other.store, &path).unwrap();
    assert_eq!(meta["seed"], 1);
    assert_eq!(other.snapshot(), m.snapshot());
    let different = Model::<f64>::build(&small(20), 1).unwrap();
    assert!(matches!(load_checkpoint(&different.store, &path), Err(Error::Checkpoint(_))));
}

#[test]
fn sigmoid_gate_config_builds() {
    let mut cfg = with_gca(small(20), vec![0], KvSource::Pairwise);
    cfg.gca.gate_activation = GateActivation::Sigmoid;
    cfg.gca.heads = 8;
    assert!(Model::<f64>::build(&cfg, 0).is_ok());
}
