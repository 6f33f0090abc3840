use std::path::Path;

use gcalab::metrics::{five_number_summary, pearson_r, FiveNumber, MetricsRecord};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};
use crate::store;
use crate::svg::{self, Chart, Series, Style};

/// Metric pairs correlated per domain, as `(x, y)` name stems.
pub const PAIRS: [(&str, &str); 3] = [("cos_xxprime", "ndcg10"), ("ndcg1", "auc"), ("ndcg10", "auc")];

/// Metrics given five-number summaries.
pub const SUMMARIZED: [&str; 4] = ["cos_xxprime_a", "cos_xxprime_b", "cos_xy_a", "cos_xy_b"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub domain: String,
    pub x: String,
    pub y: String,
    /// Records with both values present.
    pub n: usize,
    pub r: Option<f64>,
    pub notice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub metric: String,
    pub n: usize,
    pub summary: Option<FiveNumber>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub records: usize,
    pub correlations: Vec<Correlation>,
    pub distributions: Vec<Distribution>,
    pub notices: Vec<String>,
}

impl AnalysisReport {
    pub fn correlation(&self, domain: &str, x: &str, y: &str) -> Option<&Correlation> {
        self.correlations
            .iter()
            .find(|c| c.domain == domain && c.x == x && c.y == y)
    }
}

/// Records from a results directory: the completed cells under `cells/`
/// when present, otherwise `results.csv`.
pub fn load_records(dir: &Path) -> Result<Vec<MetricsRecord>> {
    if store::cells_dir(dir).is_dir() {
        return Ok(store::ok_records(&store::read_cells(dir)?));
    }
    let csv_path = dir.join("results.csv");
    if !csv_path.is_file() {
        return Err(RunError::Analysis(format!(
            "{} has neither cells/ nor results.csv",
            dir.display()
        )));
    }
    let mut rdr = csv::Reader::from_path(csv_path)?;
    rdr.deserialize().map(|r| r.map_err(Into::into)).collect()
}

fn paired(records: &[MetricsRecord], x: &str, y: &str) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter_map(|r| Some((r.metric(x)?, r.metric(y)?)))
        .collect()
}

/// Correlations and cosine distributions over `records` (no files).
pub fn analyze_records(records: &[MetricsRecord]) -> Result<AnalysisReport> {
    if records.len() < 3 {
        return Err(RunError::Analysis(format!(
            "analysis needs at least 3 records, found {}",
            records.len()
        )));
    }
    let mut notices = Vec::new();
    let mut correlations = Vec::new();
    for domain in ["a", "b"] {
        for (x, y) in PAIRS {
            let (xn, yn) = (format!("{x}_{domain}"), format!("{y}_{domain}"));
            let pts = paired(records, &xn, &yn);
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
            let (r, notice) = match pearson_r(&xs, &ys) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(format!("r({xn}, {yn}) omitted over {} records: {e}", xs.len()))),
            };
            notices.extend(notice.clone());
            correlations.push(Correlation {
                domain: domain.into(),
                x: xn,
                y: yn,
                n: xs.len(),
                r,
                notice,
            });
        }
    }
    let distributions = SUMMARIZED
        .iter()
        .map(|&m| {
            let vals: Vec<f64> = records.iter().filter_map(|r| r.metric(m)).collect();
            if vals.is_empty() {
                notices.push(format!("no {m} values (no record has a GCA module)"));
            }
            Distribution {
                metric: m.into(),
                n: vals.len(),
                summary: five_number_summary(&vals).ok(),
            }
        })
        .collect();
    Ok(AnalysisReport {
        records: records.len(),
        correlations,
        distributions,
        notices,
    })
}

/// Analyzes the records in `records_dir` and writes `correlations.csv`,
/// `five_number.csv`, `analysis.json` and SVG plots into `out`.
pub fn analyze(records_dir: &Path, out: &Path) -> Result<AnalysisReport> {
    let records = load_records(records_dir)?;
    let report = analyze_records(&records)?;
    std::fs::create_dir_all(out)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["domain", "x", "y", "n", "r", "notice"])?;
    for c in &report.correlations {
        w.write_record([
            c.domain.clone(),
            c.x.clone(),
            c.y.clone(),
            c.n.to_string(),
            c.r.map(|r| r.to_string()).unwrap_or_default(),
            c.notice.clone().unwrap_or_default(),
        ])?;
    }
    store::write_atomic(&out.join("correlations.csv"), &finish(w)?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "n", "min", "q1", "median", "q3", "max"])?;
    for d in &report.distributions {
        let mut row = vec![d.metric.clone(), d.n.to_string()];
        match d.summary {
            Some(s) => row.extend([s.min, s.q1, s.median, s.q3, s.max].map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        w.write_record(&row)?;
    }
    store::write_atomic(&out.join("five_number.csv"), &finish(w)?)?;
    store::write_atomic(&out.join("analysis.json"), &serde_json::to_vec_pretty(&report)?)?;

    for c in &report.correlations {
        let r = c.r.map_or("omitted".to_string(), |r| format!("{r:.3}"));
        let svg = svg::chart(&Chart {
            title: format!("{} vs {} (r = {r}, n = {})", c.y, c.x, c.n),
            x_label: c.x.clone(),
            y_label: c.y.clone(),
            series: vec![Series {
                label: "run".into(),
                points: paired(&records, &c.x, &c.y),
                style: Style::Markers,
            }],
        });
        store::write_atomic(&out.join(format!("scatter_{}__{}.svg", c.x, c.y)), svg.as_bytes())?;
    }
    let groups: Vec<(String, FiveNumber)> = report
        .distributions
        .iter()
        .filter_map(|d| Some((d.metric.clone(), d.summary?)))
        .collect();
    if !groups.is_empty() {
        let svg = svg::boxplot("Probe cosine similarities", "|cos|", &groups);
        store::write_atomic(&out.join("cosine_boxplot.svg"), svg.as_bytes())?;
    }
    Ok(report)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| std::io::Error::other(e.to_string()).into())
}
