//! Exhaustive oracles for the ranking metrics and sort-based oracles for
//! the summary statistics.

#![allow(dead_code)]

use gcalab::metrics::{auc, five_number_summary, ndcg_at_k, pearson_r};
use gcalab::rng::Rng;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// Every permutation of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) { a.swap(i, k - 1) } else { a.swap(0, k - 1) }
            heap(k - 1, a, out);
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

/// NDCG@k by materialising the ranked list: candidates sorted by score,
/// ties kept in index order, and the DCG of the single relevant item
/// divided by the ideal DCG of 1.
pub fn ndcg_oracle(scores: &[f64], positive: usize, k: usize) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let pos = order.iter().position(|&i| i == positive).unwrap();
    if pos < k { 1.0 / ((pos + 2) as f64).log2() } else { 0.0 }
}

/// AUC as the expected fraction of negatives placed below the positive
/// when ties are broken uniformly at random, averaged over every ordering
/// of the candidates that is consistent with the scores.
pub fn auc_oracle(scores: &[f64], positive: usize, perms: &[Vec<usize>]) -> f64 {
    let (mut total, mut count) = (0.0, 0usize);
    for p in perms {
        if p.windows(2).any(|w| scores[w[0]] < scores[w[1]]) {
            continue;
        }
        let at = p.iter().position(|&i| i == positive).unwrap();
        total += (scores.len() - 1 - at) as f64 / (scores.len() - 1) as f64;
        count += 1;
    }
    total / count as f64
}

/// Score lists exercising ties: every assignment of values from
/// `{0, 1, 2}` for `c <= 6`, and every ordering of distinct scores for
/// `c` in 7 and 8. Returns the number of (list, positive, k) cases
/// checked and how many disagreed with the oracles.
pub fn exhaustive_ranking_check() -> (usize, usize) {
    let (mut cases, mut bad) = (0, 0);
    for c in 2..=8usize {
        let perms = permutations(c);
        let lists: Vec<Vec<f64>> = if c <= 6 {
            (0..3usize.pow(c as u32))
                .map(|mut code| {
                    (0..c)
                        .map(|_| {
                            let v = (code % 3) as f64;
                            code /= 3;
                            v
                        })
                        .collect()
                })
                .collect()
        } else {
            perms.iter().map(|p| p.iter().map(|&v| v as f64).collect()).collect()
        };
        for scores in &lists {
            for positive in 0..c {
                for k in 1..=c + 1 {
                    cases += 1;
                    if ndcg_at_k(scores, positive, k).unwrap() != ndcg_oracle(scores, positive, k) {
                        bad += 1;
                    }
                }
                // The consistent-ordering enumeration is only affordable with ties.
                let want = if c <= 6 {
                    auc_oracle(scores, positive, &perms)
                } else {
                    let below = scores.iter().filter(|&&s| s < scores[positive]).count();
                    below as f64 / (c - 1) as f64
                };
                cases += 1;
                if (auc(scores, positive).unwrap() - want).abs() > 1e-15 {
                    bad += 1;
                }
            }
        }
    }
    (cases, bad)
}

/// Two-pass Pearson correlation in the textbook form.
pub fn pearson_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Quantile from a sorted copy: linear interpolation at `p (n - 1)`.
pub fn quantile_oracle(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let (lo, frac) = (pos.floor() as usize, pos.fract());
    if frac == 0.0 { v[lo] } else { v[lo] * (1.0 - frac) + v[lo + 1] * frac }
}

/// Largest deviation of `pearson_r` and `five_number_summary` from the
/// oracles over `trials` random samples, plus exact checks on a perfectly
/// linear sample.
pub fn statistics_max_error(rng: &mut Rng, trials: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.random_range(3..40);
        let xs: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let slope: f64 = rng.random_range(-2.0..2.0);
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| slope * x + e).collect();
        worst = worst.max((pearson_r(&xs, &ys).unwrap() - pearson_oracle(&xs, &ys)).abs());
        let s = five_number_summary(&xs).unwrap();
        for (got, p) in [(s.min, 0.0), (s.q1, 0.25), (s.median, 0.5), (s.q3, 0.75), (s.max, 1.0)] {
            worst = worst.max((got - quantile_oracle(&xs, p)).abs());
        }
    }
    let line: Vec<f64> = (0..10).map(f64::from).collect();
    let down: Vec<f64> = line.iter().map(|x| 5.0 - 3.0 * x).collect();
    worst = worst.max((pearson_r(&line, &down).unwrap() + 1.0).abs());
    worst
}
