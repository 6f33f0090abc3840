use std::path::{Path, PathBuf};
use std::time::Instant;

use gcalab::attention::{Domain, ForwardCtx};
use gcalab::backbone::{evaluate, save_checkpoint, train_batch, EvalSet, ProbeSet};
use gcalab::data::{Split, SplitDataset};
use gcalab::metrics::MetricsRecord;
use gcalab::optim::AdamConfig;
use gcalab::rng::SeedStream;
use gcalab::{Adam, Model};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::spec::RunSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_ndcg10_a: f64,
    pub val_ndcg10_b: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub record: MetricsRecord,
    pub epochs: Vec<EpochLog>,
    pub checkpoint: Option<PathBuf>,
}

/// Candidate lists shared by every run on one dataset.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: SplitDataset,
    pub val: EvalSet,
    pub test: EvalSet,
}

impl PreparedData {
    pub fn new(spec: &RunSpec) -> Result<Self> {
        let dataset = spec.data.load()?;
        let seed = spec.data.eval_seed();
        let k = spec.training.eval_negatives;
        Ok(Self {
            val: EvalSet::build(&dataset, Split::Val, k, seed)?,
            test: EvalSet::build(&dataset, Split::Test, k, seed)?,
            dataset,
        })
    }
}

/// Loads the data and trains one seed.
pub fn run_train(spec: &RunSpec, seed: u64) -> Result<RunOutcome> {
    spec.validate()?;
    let data = PreparedData::new(spec)?;
    let mut log = Vec::new();
    run_train_on(spec, &data, seed, None, &mut log)
}

/// Trains with early stopping on mean validation NDCG@10 over both
/// domains, restores the best epoch and evaluates the test split with
/// probes attached. Epoch summaries are appended to `log` as they finish,
/// so a failed run keeps its partial history.
pub fn run_train_on(
    spec: &RunSpec,
    data: &PreparedData,
    seed: u64,
    checkpoint_dir: Option<&Path>,
    log: &mut Vec<EpochLog>,
) -> Result<RunOutcome> {
    let cfg = spec.resolve_model(&data.dataset);
    let t = &spec.training;
    let model = Model::build(&cfg, seed)?;
    let stream = SeedStream::new(seed);
    let mut rng = stream.rng("train");
    let mut ctx = ForwardCtx::train(stream.rng("dropout"));
    let mut opt = Adam::new(
        AdamConfig {
            lr: t.lr,
            ..Default::default()
        },
        model.store.as_slice(),
    );

    let score = |r: &gcalab::backbone::EvalResult| 0.5 * (r.ndcg10_a + r.ndcg10_b);
    let mut best = (0usize, f64::NEG_INFINITY, model.snapshot());
    if t.epochs == 0 {
        best.1 = score(&evaluate(&model, &data.dataset, &data.val, t.eval_batch_size, None)?);
    }
    let mut order: Vec<usize> = (0..data.dataset.users.len()).collect();
    for epoch in 1..=t.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(t.batch_size) {
            let batch = train_batch(
                &data.dataset,
                chunk,
                t.negatives_per_pos,
                cfg.combined_thread,
                cfg.max_len,
                &mut rng,
            )?;
            model.store.zero_grad();
            let loss = model.training_loss(&batch, &mut ctx)?;
            loss.backward()?;
            opt.step(model.store.as_slice())?;
            total += loss.item();
            batches += 1;
        }
        let val = evaluate(&model, &data.dataset, &data.val, t.eval_batch_size, None)?;
        log.push(EpochLog {
            epoch,
            loss: total / batches.max(1) as f64,
            val_ndcg10_a: val.ndcg10_a,
            val_ndcg10_b: val.ndcg10_b,
            seconds: start.elapsed().as_secs_f64(),
        });
        if score(&val) > best.1 {
            best = (epoch, score(&val), model.snapshot());
        } else if epoch - best.0 >= t.patience.max(1) {
            break;
        }
    }

    model.restore(&best.2)?;
    let mut probes = ProbeSet::default();
    let test = evaluate(&model, &data.dataset, &data.test, t.eval_batch_size, Some(&mut probes))?;
    let (pa, pb) = (probes.pooled(Domain::A), probes.pooled(Domain::B));
    let config_id = spec.config_id();
    let record = MetricsRecord {
        config_id: config_id.clone(),
        seed,
        param_count: model.param_count(),
        epoch_of_best: best.0,
        ndcg1_a: test.ndcg1_a,
        ndcg1_b: test.ndcg1_b,
        ndcg10_a: test.ndcg10_a,
        ndcg10_b: test.ndcg10_b,
        auc_a: test.auc_a,
        auc_b: test.auc_b,
        cos_xxprime_a: pa.cos_xxprime(),
        cos_xxprime_b: pb.cos_xxprime(),
        cos_xy_a: pa.cos_xy(),
        cos_xy_b: pb.cos_xy(),
    };
    record.validate()?;
    let checkpoint = match checkpoint_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{config_id}__seed{seed}.ckpt"));
            let meta = serde_json::json!({
                "config_id": config_id,
                "seed": seed,
                "epoch_of_best": best.0,
                "model": cfg,
                "optimizer": {"kind": "adam", "lr": t.lr},
            });
            save_checkpoint(&model.store, meta, &path)?;
            Some(path)
        }
        None => None,
    };
    Ok(RunOutcome {
        record,
        epochs: log.clone(),
        checkpoint,
    })
}
