use std::path::Path;

use gcalab::metrics::{mean_sd, MetricsRecord};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};
use crate::matching::match_parameters;
use crate::spec::{RunSpec, ScalingCurveSpec};
use crate::store::{self, CellStatus};
use crate::svg::{self, Chart, Series, Style};
use crate::sweep::{run_cell, DataCache, SweepOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    /// Plain model at one grid width.
    Baseline,
    /// The GCA variant at the base width.
    Gca,
    /// Plain model sized to the GCA variant's parameter count.
    Matched,
}

/// One (parameters, accuracy) point of the curve, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub kind: PointKind,
    pub d: usize,
    pub ffn_hidden: Option<usize>,
    pub param_count: usize,
    pub config_id: String,
    pub seeds: Vec<u64>,
    pub ndcg10_a_mean: f64,
    pub ndcg10_a_sd: f64,
    pub ndcg10_b_mean: f64,
    pub ndcg10_b_sd: f64,
    pub records: Vec<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub target: usize,
    pub achieved: Option<usize>,
    pub rel_err: f64,
    pub tolerance: f64,
    pub within_tolerance: bool,
    /// Set when no plain width reaches the target.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub spec: ScalingCurveSpec,
    pub points: Vec<ScalingPoint>,
    pub matching: Option<MatchSummary>,
    pub failed: Vec<String>,
}

impl ScalingReport {
    pub fn point(&self, kind: PointKind) -> Option<&ScalingPoint> {
        self.points.iter().find(|p| p.kind == kind)
    }

    pub fn baselines(&self) -> impl Iterator<Item = &ScalingPoint> {
        self.points.iter().filter(|p| p.kind == PointKind::Baseline)
    }
}

fn run_point(
    dir: &Path,
    kind: PointKind,
    spec: RunSpec,
    cache: &DataCache,
    opts: &SweepOptions,
    failed: &mut Vec<String>,
) -> Result<Option<ScalingPoint>> {
    let id = spec.config_id();
    let mut records = Vec::new();
    for &seed in &spec.seeds {
        let cell = if opts.resume && store::is_complete(dir, &id, seed) {
            store::read_cell(&store::cell_path(dir, &id, seed))?
        } else {
            run_cell(dir, &spec, seed, cache, opts.checkpoints)?
        };
        match (cell.status, cell.record) {
            (CellStatus::Ok, Some(r)) => records.push(r),
            _ => failed.push(format!("{id} seed {seed}: {}", cell.error.unwrap_or_default())),
        }
    }
    if records.is_empty() {
        return Ok(None);
    }
    let col = |f: fn(&MetricsRecord) -> f64| mean_sd(&records.iter().map(f).collect::<Vec<_>>());
    let (a, sa) = col(|r| r.ndcg10_a);
    let (b, sb) = col(|r| r.ndcg10_b);
    Ok(Some(ScalingPoint {
        kind,
        d: spec.model.d,
        ffn_hidden: spec.model.ffn_hidden,
        param_count: records[0].param_count,
        config_id: id,
        seeds: records.iter().map(|r| r.seed).collect(),
        ndcg10_a_mean: a,
        ndcg10_a_sd: sa,
        ndcg10_b_mean: b,
        ndcg10_b_sd: sb,
        records,
    }))
}

/// Trains the plain model at every grid width, the GCA variant at the
/// base width and, when requested, a plain model matched to the GCA
/// variant's parameter count. Writes `scaling.json`, `scaling.csv` and
/// `scaling.svg` into `dir`.
pub fn run_scaling_curve(spec: &ScalingCurveSpec, dir: &Path, opts: &SweepOptions) -> Result<ScalingReport> {
    spec.validate()?;
    std::fs::create_dir_all(dir)?;
    let cache = DataCache::default();
    let data = cache.get(&spec.base)?;
    let plain_gca = gcalab::gca::GcaConfig {
        placements: Vec::new(),
        ..spec.base.model.gca.clone()
    };
    let plain = |d: usize, ffn: Option<usize>| {
        let mut s = spec.base.clone();
        s.model.d = d;
        s.model.ffn_hidden = ffn;
        s.model.gca = plain_gca.clone();
        s
    };
    let mut gca_spec = spec.base.clone();
    gca_spec.model.gca = spec.gca_variant.clone();
    gca_spec.validate()?;

    let mut points = Vec::new();
    let mut failed = Vec::new();
    for &d in &spec.width_grid {
        let s = plain(d, spec.base.model.ffn_hidden);
        s.validate()?;
        points.extend(run_point(dir, PointKind::Baseline, s, &cache, opts, &mut failed)?);
    }
    points.extend(run_point(dir, PointKind::Gca, gca_spec.clone(), &cache, opts, &mut failed)?);

    let matching = if spec.include_matched {
        let target = gca_spec.resolve_model(&data.dataset).param_count();
        let baseline = plain(spec.base.model.d, spec.base.model.ffn_hidden).resolve_model(&data.dataset);
        match match_parameters(&baseline, target, spec.tolerance) {
            Ok(m) => {
                let s = plain(m.config.d, m.config.ffn_hidden);
                points.extend(run_point(dir, PointKind::Matched, s, &cache, opts, &mut failed)?);
                Some(MatchSummary {
                    target,
                    achieved: Some(m.params),
                    rel_err: m.rel_err,
                    tolerance: spec.tolerance,
                    within_tolerance: true,
                    error: None,
                })
            }
            Err(e @ RunError::InfeasibleMatch { .. }) => {
                let RunError::InfeasibleMatch { nearest, rel_err, .. } = e else { unreachable!() };
                Some(MatchSummary {
                    target,
                    achieved: Some(nearest),
                    rel_err,
                    tolerance: spec.tolerance,
                    within_tolerance: false,
                    error: Some(e.to_string()),
                })
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let report = ScalingReport {
        spec: spec.clone(),
        points,
        matching,
        failed,
    };
    write_outputs(dir, &report)?;
    Ok(report)
}

fn write_outputs(dir: &Path, report: &ScalingReport) -> Result<()> {
    store::write_atomic(&dir.join("scaling.json"), &serde_json::to_vec_pretty(report)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "kind",
        "d",
        "ffn_hidden",
        "param_count",
        "config_id",
        "seeds",
        "ndcg10_a_mean",
        "ndcg10_a_sd",
        "ndcg10_b_mean",
        "ndcg10_b_sd",
    ])?;
    for p in &report.points {
        let kind = serde_json::to_value(p.kind)?;
        w.write_record([
            kind.as_str().unwrap_or_default().to_string(),
            p.d.to_string(),
            p.ffn_hidden.map(|h| h.to_string()).unwrap_or_default(),
            p.param_count.to_string(),
            p.config_id.clone(),
            p.seeds.len().to_string(),
            p.ndcg10_a_mean.to_string(),
            p.ndcg10_a_sd.to_string(),
            p.ndcg10_b_mean.to_string(),
            p.ndcg10_b_sd.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    store::write_atomic(&dir.join("scaling.csv"), &bytes)?;

    let mut series = Vec::new();
    for (domain, get) in [
        ("A", (|p: &ScalingPoint| p.ndcg10_a_mean) as fn(&ScalingPoint) -> f64),
        ("B", |p: &ScalingPoint| p.ndcg10_b_mean),
    ] {
        series.push(Series {
            label: format!("baseline width sweep, {domain}"),
            points: report.baselines().map(|p| (p.param_count as f64, get(p))).collect(),
            style: Style::Line,
        });
        for kind in [PointKind::Gca, PointKind::Matched] {
            if let Some(p) = report.point(kind) {
                series.push(Series {
                    label: format!("{} d={}, {domain}", if kind == PointKind::Gca { "GCA" } else { "matched baseline" }, p.d),
                    points: vec![(p.param_count as f64, get(p))],
                    style: Style::Markers,
                });
            }
        }
    }
    let svg = svg::chart(&Chart {
        title: "NDCG@10 against parameter count".into(),
        x_label: "parameters".into(),
        y_label: "mean test NDCG@10".into(),
        series,
    });
    store::write_atomic(&dir.join("scaling.svg"), svg.as_bytes())
}
