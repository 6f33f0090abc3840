use std::fmt::Write;
use std::path::Path;

use gcalab::backbone::ModelConfig;
use gcalab::metrics::SeedSummary;
use serde::{Deserialize, Serialize};

use crate::analyze::AnalysisReport;
use crate::error::Result;
use crate::scaling::ScalingReport;
use crate::spec::RunSpec;
use crate::store::{self, CellStatus};

/// One config of a results directory with the exact spec and seeds that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub config_id: String,
    pub spec: RunSpec,
    pub resolved_model: Option<ModelConfig>,
    pub seeds: Vec<u64>,
    pub summary: SeedSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub configs: Vec<ConfigEntry>,
    pub failed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub sections: Vec<Section>,
    pub scaling: Option<ScalingReport>,
    pub analysis: Option<AnalysisReport>,
}

/// Rebuilds a section from the cell files; aggregates are recomputed from
/// the per-seed records rather than read from any roll-up.
pub fn section(name: &str, dir: &Path) -> Result<Section> {
    let cells = store::read_cells(dir)?;
    let records = store::ok_records(&cells);
    let mut configs = Vec::new();
    for summary in store::summarize(&records)? {
        let mine: Vec<_> = cells
            .iter()
            .filter(|c| c.config_id == summary.config_id && c.status == CellStatus::Ok)
            .collect();
        configs.push(ConfigEntry {
            config_id: summary.config_id.clone(),
            spec: mine[0].spec.clone(),
            resolved_model: mine[0].resolved_model.clone(),
            seeds: mine.iter().map(|c| c.seed).collect(),
            summary,
        });
    }
    let failed = cells
        .iter()
        .filter(|c| c.status == CellStatus::Failed)
        .map(|c| format!("{} seed {}: {}", c.config_id, c.seed, c.error.clone().unwrap_or_default()))
        .collect();
    Ok(Section {
        name: name.into(),
        configs,
        failed,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if !path.is_file() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&std::fs::read(path)?)?))
}

/// Collects whatever `out` holds (`train/`, `sweep/`, `scaling/`,
/// `analysis/`) into `out/report.md` and `out/report.json`.
pub fn write_report(out: &Path) -> Result<Report> {
    let mut sections = Vec::new();
    for name in ["train", "sweep", "scaling"] {
        let dir = out.join(name);
        if store::cells_dir(&dir).is_dir() {
            sections.push(section(name, &dir)?);
        }
    }
    let report = Report {
        sections,
        scaling: read_json(&out.join("scaling").join("scaling.json"))?,
        analysis: read_json(&out.join("analysis").join("analysis.json"))?,
    };
    store::write_atomic(&out.join("report.json"), &serde_json::to_vec_pretty(&report)?)?;
    store::write_atomic(&out.join("report.md"), render_markdown(&report).as_bytes())?;
    Ok(report)
}

fn cell(s: &SeedSummary, name: &str) -> String {
    match s.stat(name) {
        Some(m) if m.count > 1 => format!("{:.4} ± {:.4}", m.mean, m.sd),
        Some(m) => format!("{:.4}", m.mean),
        None => "n/a".into(),
    }
}

pub fn render_markdown(r: &Report) -> String {
    let mut md = String::from("# Experiment report\n\n");
    if r.sections.is_empty() && r.scaling.is_none() && r.analysis.is_none() {
        md.push_str("No results found.\n");
    }
    for s in &r.sections {
        let _ = writeln!(md, "## {}\n", s.name);
        md.push_str("| config | seeds | params | NDCG@10 A | NDCG@10 B | NDCG@1 A | NDCG@1 B | AUC A | AUC B | cos(X,X') A |\n");
        md.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
        for c in &s.configs {
            let m = &c.summary;
            let _ = writeln!(
                md,
                "| `{}` | {:?} | {} | {} | {} | {} | {} | {} | {} | {} |",
                c.config_id,
                c.seeds,
                m.param_count,
                cell(m, "ndcg10_a"),
                cell(m, "ndcg10_b"),
                cell(m, "ndcg1_a"),
                cell(m, "ndcg1_b"),
                cell(m, "auc_a"),
                cell(m, "auc_b"),
                cell(m, "cos_xxprime_a"),
            );
        }
        md.push('\n');
        for f in &s.failed {
            let _ = writeln!(md, "- failed: {f}");
        }
        md.push_str("<details><summary>Resolved run specs</summary>\n\n");
        for c in &s.configs {
            let _ = writeln!(
                md,
                "`{}`\n\n```json\n{}\n```\n",
                c.config_id,
                serde_json::to_string_pretty(&c.spec).unwrap_or_default()
            );
            if let Some(m) = &c.resolved_model {
                let _ = writeln!(
                    md,
                    "Resolved model (vocabulary sizes from the data, {} parameters):\n\n```json\n{}\n```\n",
                    m.param_count(),
                    serde_json::to_string_pretty(m).unwrap_or_default()
                );
            }
        }
        md.push_str("</details>\n\n");
    }
    if let Some(sc) = &r.scaling {
        md.push_str("## Scaling curve\n\n| kind | d | ffn | params | NDCG@10 A | NDCG@10 B |\n|---|---|---|---|---|---|\n");
        for p in &sc.points {
            let _ = writeln!(
                md,
                "| {:?} | {} | {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} |",
                p.kind,
                p.d,
                p.ffn_hidden.map_or("default".into(), |h| h.to_string()),
                p.param_count,
                p.ndcg10_a_mean,
                p.ndcg10_a_sd,
                p.ndcg10_b_mean,
                p.ndcg10_b_sd
            );
        }
        if let Some(m) = &sc.matching {
            let _ = writeln!(
                md,
                "\nParameter match: target {}, achieved {:?}, relative error {:.4} (tolerance {}).",
                m.target, m.achieved, m.rel_err, m.tolerance
            );
        }
        md.push('\n');
    }
    if let Some(a) = &r.analysis {
        let _ = writeln!(md, "## Analysis ({} records)\n", a.records);
        md.push_str("| x | y | n | Pearson r |\n|---|---|---|---|\n");
        for c in &a.correlations {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} |",
                c.x,
                c.y,
                c.n,
                c.r.map_or("omitted".into(), |r| format!("{r:.4}"))
            );
        }
        md.push_str("\n| metric | n | min | q1 | median | q3 | max |\n|---|---|---|---|---|---|---|\n");
        for d in &a.distributions {
            match d.summary {
                Some(s) => {
                    let _ = writeln!(
                        md,
                        "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                        d.metric, d.n, s.min, s.q1, s.median, s.q3, s.max
                    );
                }
                None => {
                    let _ = writeln!(md, "| {} | 0 | | | | | |", d.metric);
                }
            }
        }
        for n in &a.notices {
            let _ = writeln!(md, "\n- {n}");
        }
    }
    md
}
