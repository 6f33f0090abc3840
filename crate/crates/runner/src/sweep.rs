use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use gcalab::metrics::{MetricsRecord, SeedSummary};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::spec::{RunSpec, SweepSpec};
use crate::store::{self, Cell, CellStatus};
use crate::train::{run_train_on, PreparedData};

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Skip cells that already have a completed result file.
    pub resume: bool,
    /// Worker threads; values below 2 run the cells in order on the caller.
    pub jobs: usize,
    /// Save a checkpoint per cell under `<dir>/checkpoints`.
    pub checkpoints: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub config_id: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    /// Records of every completed cell in the directory, sorted by config
    /// id then seed.
    pub records: Vec<MetricsRecord>,
    pub summaries: Vec<SeedSummary>,
    pub failed: Vec<FailedCell>,
    /// Cells trained by this call (including ones that failed).
    pub executed: usize,
    /// Cells skipped because a completed result already existed.
    pub skipped: usize,
}

/// Caches prepared datasets by data source and evaluation settings so
/// configs that share data generate it once.
#[derive(Default)]
pub struct DataCache {
    entries: Mutex<HashMap<String, Arc<PreparedData>>>,
}

impl DataCache {
    pub fn get(&self, spec: &RunSpec) -> Result<Arc<PreparedData>> {
        let key = serde_json::json!([spec.data, spec.training.eval_negatives]).to_string();
        if let Some(d) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(d));
        }
        let data = Arc::new(PreparedData::new(spec)?);
        self.entries
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&data));
        Ok(data)
    }
}

/// Trains one cell and writes its result file. Errors and panics inside
/// training become a failed cell rather than an error of the caller.
pub fn run_cell(dir: &Path, spec: &RunSpec, seed: u64, cache: &DataCache, checkpoints: bool) -> Result<Cell> {
    let config_id = spec.config_id();
    let ckpt_dir: Option<PathBuf> = checkpoints.then(|| dir.join("checkpoints"));
    let mut log = Vec::new();
    let mut resolved_model = None;
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        let data = cache.get(spec)?;
        resolved_model = Some(spec.resolve_model(&data.dataset));
        run_train_on(spec, &data, seed, ckpt_dir.as_deref(), &mut log)
    }));
    let cell = match outcome {
        Ok(Ok(out)) => Cell {
            config_id,
            seed,
            status: CellStatus::Ok,
            spec: spec.clone(),
            resolved_model,
            record: Some(out.record),
            error: None,
            epochs: out.epochs,
            checkpoint: out.checkpoint,
        },
        failure => {
            let error = match failure {
                Ok(Err(e)) => e.to_string(),
                Err(panic) => panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "training panicked".into()),
                Ok(Ok(_)) => unreachable!(),
            };
            Cell {
                config_id,
                seed,
                status: CellStatus::Failed,
                spec: spec.clone(),
                resolved_model,
                record: None,
                error: Some(error),
                epochs: log,
                checkpoint: None,
            }
        }
    };
    store::write_cell(dir, &cell)?;
    Ok(cell)
}

/// Runs every grid point for every seed of the base spec, writing one
/// result file per cell as it completes, then rebuilds `results.csv` and
/// `summary.csv` from all completed cells in `dir`.
pub fn run_sweep(spec: &SweepSpec, dir: &Path, opts: &SweepOptions) -> Result<SweepOutcome> {
    let points = spec.expand()?;
    std::fs::create_dir_all(dir)?;
    store::write_atomic(&dir.join("sweep.json"), &serde_json::to_vec_pretty(spec)?)?;

    let mut todo = Vec::new();
    let mut skipped = 0;
    for p in &points {
        let id = p.config_id();
        for &seed in &p.seeds {
            if opts.resume && store::is_complete(dir, &id, seed) {
                skipped += 1;
            } else {
                todo.push((p, seed));
            }
        }
    }

    let cache = DataCache::default();
    let failed = Mutex::new(Vec::new());
    let next = AtomicUsize::new(0);
    let io_error: Mutex<Option<crate::RunError>> = Mutex::new(None);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(p, seed)) = todo.get(i) else { break };
        match run_cell(dir, p, seed, &cache, opts.checkpoints) {
            Ok(cell) if cell.status == CellStatus::Failed => failed.lock().expect("lock").push(FailedCell {
                config_id: cell.config_id,
                seed,
                error: cell.error.unwrap_or_default(),
            }),
            Ok(_) => {}
            Err(e) => {
                io_error.lock().expect("lock").get_or_insert(e);
                break;
            }
        }
    };
    if opts.jobs < 2 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..opts.jobs.min(todo.len()) {
                s.spawn(worker);
            }
        });
    }
    if let Some(e) = io_error.into_inner().expect("lock") {
        return Err(e);
    }

    let records = store::rebuild_rollup(dir)?;
    let summaries = store::summarize(&records)?;
    store::write_summary(dir, &summaries)?;
    let mut failed = failed.into_inner().expect("lock");
    failed.sort_by(|a, b| (&a.config_id, a.seed).cmp(&(&b.config_id, b.seed)));
    Ok(SweepOutcome {
        records,
        summaries,
        failed,
        executed: todo.len(),
        skipped,
    })
}
