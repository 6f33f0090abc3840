//! Ranking metrics, the query/output cosine probe, correlation and
//! per-seed aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 1-based rank of `positive` under descending score. Equal scores are
/// ordered by candidate index, lowest first.
pub fn rank_of(scores: &[f64], positive: usize) -> usize {
    let sp = scores[positive];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != positive && (s > sp || (s == sp && j < positive)))
        .count()
}

/// NDCG@k for a single relevant candidate: `1 / log2(1 + rank)` when the
/// rank is within `k`, else 0.
pub fn ndcg_at_k(scores: &[f64], positive: usize, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Contract("ndcg cutoff k must be >= 1".into()));
    }
    if positive >= scores.len() {
        return Err(Error::Index(format!(
            "positive index {positive} outside {} candidates",
            scores.len()
        )));
    }
    let rank = rank_of(scores, positive);
    Ok(if rank <= k {
        1.0 / ((1 + rank) as f64).log2()
    } else {
        0.0
    })
}

/// Fraction of negatives scored strictly below the positive; ties count 1/2.
pub fn auc(scores: &[f64], positive: usize) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::Contract("auc needs at least two candidates".into()));
    }
    if positive >= scores.len() {
        return Err(Error::Index(format!(
            "positive index {positive} outside {} candidates",
            scores.len()
        )));
    }
    let sp = scores[positive];
    let credit: f64 = scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != positive)
        .map(|(_, &s)| {
            if s < sp {
                1.0
            } else if s == sp {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    Ok(credit / (scores.len() - 1) as f64)
}

/// Running mean of `|cos(x_i, y_i)|` over row vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CosineAccumulator {
    pub sum: f64,
    pub count: u64,
}

impl CosineAccumulator {
    /// Adds every row `i` with `mask[i]` from two `[rows, d]` buffers.
    /// Rows where either vector has zero norm contribute 0.
    pub fn update(&mut self, x: &[f64], y: &[f64], d: usize, mask: &[bool]) -> Result<()> {
        if x.len() != y.len() || d == 0 || x.len() != mask.len() * d {
            return Err(Error::dim(format!(
                "cosine probe: {} vs {} values for {} rows of width {d}",
                x.len(),
                y.len(),
                mask.len()
            )));
        }
        for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            let (xr, yr) = (&x[r * d..(r + 1) * d], &y[r * d..(r + 1) * d]);
            self.sum += abs_cosine(xr, yr);
            self.count += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &CosineAccumulator) {
        self.sum += other.sum;
        self.count += other.count;
    }

    pub fn value(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

pub fn abs_cosine(x: &[f64], y: &[f64]) -> f64 {
    let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    (dot / (nx.sqrt() * ny.sqrt())).abs().min(1.0)
}

/// Accumulates the batch- and position-averaged `|cos(x_bi, x'_bi)|` of
/// two `[B, l, d]` tensors over positions where `mask` (`[B, l]`) is set.
/// Values are read without touching the gradient graph.
pub fn cosine_probe_update<S: Scalar>(
    acc: &mut CosineAccumulator,
    x: &Tensor<S>,
    xprime: &Tensor<S>,
    mask: &[bool],
) -> Result<()> {
    if x.shape() != xprime.shape() || x.rank() != 3 {
        return Err(Error::dim(format!(
            "cosine probe shapes {:?} and {:?}",
            x.shape(),
            xprime.shape()
        )));
    }
    acc.update(&x.to_f64_vec(), &xprime.to_f64_vec(), x.last_dim(), mask)
}

/// Sample Pearson correlation.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::dim(format!("{} xs vs {} ys", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Contract(format!(
            "correlation needs at least 3 points, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if sxx == 0.0 || syy == 0.0 || constant(xs) || constant(ys) {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Min, quartiles and max; quartiles interpolate linearly between order
/// statistics at position `p * (n - 1)`.
pub fn five_number_summary(values: &[f64]) -> Result<FiveNumber> {
    if values.is_empty() {
        return Err(Error::Contract("five-number summary of no values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Ok(FiveNumber {
        min: v[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: v[v.len() - 1],
    })
}

/// One run's outcome. Cosine fields are `None` for models without GCA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub config_id: String,
    pub seed: u64,
    pub param_count: usize,
    pub epoch_of_best: usize,
    pub ndcg1_a: f64,
    pub ndcg1_b: f64,
    pub ndcg10_a: f64,
    pub ndcg10_b: f64,
    pub auc_a: f64,
    pub auc_b: f64,
    pub cos_xxprime_a: Option<f64>,
    pub cos_xxprime_b: Option<f64>,
    pub cos_xy_a: Option<f64>,
    pub cos_xy_b: Option<f64>,
}

/// Column order of [`MetricsRecord::to_csv_row`].
pub const CSV_COLUMNS: [&str; 14] = [
    "config_id",
    "seed",
    "param_count",
    "epoch_of_best",
    "ndcg1_a",
    "ndcg1_b",
    "ndcg10_a",
    "ndcg10_b",
    "auc_a",
    "auc_b",
    "cos_xxprime_a",
    "cos_xxprime_b",
    "cos_xy_a",
    "cos_xy_b",
];

/// Names of the float-valued metrics, in CSV order.
pub const METRIC_NAMES: [&str; 10] = [
    "ndcg1_a",
    "ndcg1_b",
    "ndcg10_a",
    "ndcg10_b",
    "auc_a",
    "auc_b",
    "cos_xxprime_a",
    "cos_xxprime_b",
    "cos_xy_a",
    "cos_xy_b",
];

impl MetricsRecord {
    pub fn metric_values(&self) -> [Option<f64>; 10] {
        [
            Some(self.ndcg1_a),
            Some(self.ndcg1_b),
            Some(self.ndcg10_a),
            Some(self.ndcg10_b),
            Some(self.auc_a),
            Some(self.auc_b),
            self.cos_xxprime_a,
            self.cos_xxprime_b,
            self.cos_xy_a,
            self.cos_xy_b,
        ]
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        METRIC_NAMES
            .iter()
            .position(|&n| n == name)
            .and_then(|i| self.metric_values()[i])
    }

    /// Checks the documented ranges.
    pub fn validate(&self) -> Result<()> {
        if self.param_count == 0 {
            return Err(Error::Contract("param_count must be positive".into()));
        }
        for (name, v) in METRIC_NAMES.iter().zip(self.metric_values()) {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Contract(format!("{name} = {v} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    /// Missing cosine values are empty fields.
    pub fn to_csv_row(&self) -> String {
        let mut fields = vec![
            self.config_id.clone(),
            self.seed.to_string(),
            self.param_count.to_string(),
            self.epoch_of_best.to_string(),
        ];
        fields.extend(
            self.metric_values()
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
        );
        fields.join(",")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for one value.
    pub sd: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub config_id: String,
    pub runs: usize,
    pub param_count: usize,
    pub metrics: Vec<MetricStat>,
}

impl SeedSummary {
    pub fn mean(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.mean)
    }

    pub fn stat(&self, name: &str) -> Option<&MetricStat> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// Mean and standard deviation of every metric over records of one config.
pub fn aggregate_over_seeds(records: &[MetricsRecord]) -> Result<SeedSummary> {
    let first = records
        .first()
        .ok_or_else(|| Error::Contract("aggregate of no records".into()))?;
    if let Some(r) = records.iter().find(|r| r.config_id != first.config_id) {
        return Err(Error::Contract(format!(
            "mixed config ids {} and {}",
            first.config_id, r.config_id
        )));
    }
    let mut metrics = Vec::new();
    for (i, name) in METRIC_NAMES.iter().enumerate() {
        let vals: Vec<f64> = records.iter().filter_map(|r| r.metric_values()[i]).collect();
        if vals.is_empty() {
            continue;
        }
        let (mean, sd) = mean_sd(&vals);
        metrics.push(MetricStat {
            name: name.to_string(),
            mean,
            sd,
            count: vals.len(),
        });
    }
    Ok(SeedSummary {
        config_id: first.config_id.clone(),
        runs: records.len(),
        param_count: first.param_count,
        metrics,
    })
}

pub fn mean_sd(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sd = if vals.len() > 1 {
        (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}
