use gcalab::backbone::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub config: ModelConfig,
    pub params: usize,
    pub rel_err: f64,
}

fn rel(params: usize, target: usize) -> f64 {
    (params as f64 - target as f64).abs() / target as f64
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn with_shape(base: &ModelConfig, d: usize, ffn: Option<usize>) -> ModelConfig {
    ModelConfig {
        d,
        ffn_hidden: ffn,
        ..base.clone()
    }
}

/// Finds a width for `baseline` whose parameter count is within
/// `tolerance` (relative) of `target`.
///
/// The hidden size `d` is bisected over multiples of every head count the
/// config uses. One width step changes the count by far more than a few
/// percent at small `d`, so the encoder feed-forward width is then solved
/// for the two widths bracketing the target (count is affine in it). The
/// closest result wins, with the plain-width candidate preferred when it
/// already meets the tolerance.
pub fn match_parameters(baseline: &ModelConfig, target: usize, tolerance: f64) -> Result<MatchResult> {
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(RunError::Config(format!("tolerance {tolerance} must be positive")));
    }
    if target == 0 {
        return Err(RunError::Config("target parameter count must be positive".into()));
    }
    baseline.validate()?;
    let own = baseline.param_count();
    if rel(own, target) <= tolerance {
        return Ok(MatchResult {
            config: baseline.clone(),
            params: own,
            rel_err: rel(own, target),
        });
    }

    let mut step = baseline.heads;
    if !baseline.gca.placements.is_empty() {
        step = step / gcd(step, baseline.gca.heads) * baseline.gca.heads;
    }
    let min_d = {
        let floor = baseline.adapter_rank.map_or(2, |r| r + 1);
        floor.div_ceil(step) * step
    };
    let count = |d: usize, ffn: Option<usize>| with_shape(baseline, d, ffn).param_count();

    // Largest multiple `lo` with count(lo) <= target, by doubling then bisection.
    let mut hi = min_d;
    while count(hi, None) <= target {
        hi *= 2;
        if hi > 1 << 16 {
            return Err(RunError::Config(format!("target {target} is beyond any sensible width")));
        }
    }
    let mut lo = if hi == min_d { None } else { Some(hi / 2) };
    if let Some(mut l) = lo {
        let (mut a, mut b) = (l / step, hi / step);
        while b - a > 1 {
            let mid = (a + b) / 2;
            if count(mid * step, None) <= target {
                a = mid;
            } else {
                b = mid;
            }
        }
        l = a * step;
        hi = b * step;
        lo = Some(l);
    }

    let mut candidates: Vec<ModelConfig> = Vec::new();
    for d in lo.into_iter().chain([hi]) {
        candidates.push(with_shape(baseline, d, None));
        let c1 = count(d, Some(1)) as f64;
        let slope = count(d, Some(2)) as f64 - c1;
        let ffn = ((target as f64 - c1) / slope + 1.0).round();
        let ffn = ffn.clamp(1.0, 4.0 * d as f64) as usize;
        candidates.push(with_shape(baseline, d, Some(ffn)));
    }
    let best = candidates
        .into_iter()
        .map(|c| {
            let p = c.param_count();
            (rel(p, target), c.ffn_hidden.is_some(), p, c)
        })
        .min_by(|x, y| {
            let within = |r: f64| r <= tolerance;
            within(y.0)
                .cmp(&within(x.0))
                .then(if within(x.0) && within(y.0) { x.1.cmp(&y.1) } else { std::cmp::Ordering::Equal })
                .then(x.0.total_cmp(&y.0))
        })
        .expect("at least one candidate");
    let (err, _, params, config) = best;
    if err > tolerance {
        return Err(RunError::InfeasibleMatch {
            target,
            tolerance,
            nearest_d: config.d,
            nearest: params,
            rel_err: err,
        });
    }
    Ok(MatchResult {
        config,
        params,
        rel_err: err,
    })
}
