//! Results store: one JSON file per (config, seed) cell under
//! `<dir>/cells/`, written to a temporary name and renamed into place, plus
//! a roll-up CSV rebuilt from the cells.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use gcalab::backbone::ModelConfig;
use gcalab::metrics::{aggregate_over_seeds, MetricsRecord, SeedSummary, METRIC_NAMES};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::spec::RunSpec;
use crate::train::EpochLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub config_id: String,
    pub seed: u64,
    pub status: CellStatus,
    /// The exact spec the cell ran with; rerunning it with `seed`
    /// reproduces the record.
    pub spec: RunSpec,
    /// The model config after vocabulary sizes were taken from the data.
    pub resolved_model: Option<ModelConfig>,
    pub record: Option<MetricsRecord>,
    pub error: Option<String>,
    pub epochs: Vec<EpochLog>,
    pub checkpoint: Option<PathBuf>,
}

pub fn cells_dir(dir: &Path) -> PathBuf {
    dir.join("cells")
}

pub fn cell_path(dir: &Path, config_id: &str, seed: u64) -> PathBuf {
    cells_dir(dir).join(format!("{config_id}__seed{seed}.json"))
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to `path` through a uniquely named sibling and a rename,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!(
        "tmp.{}.{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_cell(dir: &Path, cell: &Cell) -> Result<PathBuf> {
    let path = cell_path(dir, &cell.config_id, cell.seed);
    write_atomic(&path, &serde_json::to_vec_pretty(cell)?)?;
    Ok(path)
}

pub fn read_cell(path: &Path) -> Result<Cell> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Whether a completed cell already exists for `(config_id, seed)`.
pub fn is_complete(dir: &Path, config_id: &str, seed: u64) -> bool {
    read_cell(&cell_path(dir, config_id, seed)).is_ok_and(|c| c.status == CellStatus::Ok)
}

/// All readable cells, sorted by config id then seed.
pub fn read_cells(dir: &Path) -> Result<Vec<Cell>> {
    let cdir = cells_dir(dir);
    if !cdir.is_dir() {
        return Ok(Vec::new());
    }
    let mut cells = Vec::new();
    for entry in fs::read_dir(cdir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            cells.push(read_cell(&path)?);
        }
    }
    cells.sort_by(|a, b| (&a.config_id, a.seed).cmp(&(&b.config_id, b.seed)));
    Ok(cells)
}

pub fn ok_records(cells: &[Cell]) -> Vec<MetricsRecord> {
    cells
        .iter()
        .filter(|c| c.status == CellStatus::Ok)
        .filter_map(|c| c.record.clone())
        .collect()
}

/// Rewrites `<dir>/results.csv` from the completed cells and returns
/// their records.
pub fn rebuild_rollup(dir: &Path) -> Result<Vec<MetricsRecord>> {
    let records = ok_records(&read_cells(dir)?);
    let mut csv = MetricsRecord::csv_header();
    csv.push('\n');
    for r in &records {
        csv.push_str(&r.to_csv_row());
        csv.push('\n');
    }
    write_atomic(&dir.join("results.csv"), csv.as_bytes())?;
    Ok(records)
}

/// Groups records by config id (sorted) and aggregates each group.
pub fn summarize(records: &[MetricsRecord]) -> Result<Vec<SeedSummary>> {
    let mut groups: std::collections::BTreeMap<&str, Vec<MetricsRecord>> = Default::default();
    for r in records {
        groups.entry(&r.config_id).or_default().push(r.clone());
    }
    groups
        .values()
        .map(|g| aggregate_over_seeds(g).map_err(Into::into))
        .collect()
}

/// Writes `<dir>/summary.csv`: one row per config with the mean and sample
/// standard deviation of every metric, and `best_ndcg10_a` marking the
/// config with the highest mean NDCG@10 in domain A.
pub fn write_summary(dir: &Path, summaries: &[SeedSummary]) -> Result<()> {
    let best = summaries
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.mean("ndcg10_a").map(|m| (i, m)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["config_id".to_string(), "runs".into(), "param_count".into()];
    for name in METRIC_NAMES {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_sd"));
    }
    header.push("best_ndcg10_a".into());
    w.write_record(&header)?;
    for (i, s) in summaries.iter().enumerate() {
        let mut row = vec![s.config_id.clone(), s.runs.to_string(), s.param_count.to_string()];
        for name in METRIC_NAMES {
            match s.stat(name) {
                Some(m) => {
                    row.push(m.mean.to_string());
                    row.push(m.sd.to_string());
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        row.push((best == Some(i)).to_string());
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    write_atomic(&dir.join("summary.csv"), &bytes)
}
