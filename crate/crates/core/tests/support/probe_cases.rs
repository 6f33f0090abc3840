//! Constructed inputs with known probe values.

#![allow(dead_code)]

use gcalab::metrics::{cosine_probe_update, CosineAccumulator};
use gcalab::rng::Rng;
use gcalab::Tensor;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn probe(x: &[f64], y: &[f64], shape: [usize; 3]) -> f64 {
    let mut acc = CosineAccumulator::default();
    let tx = Tensor::new(shape.to_vec(), x.to_vec()).unwrap();
    let ty = Tensor::new(shape.to_vec(), y.to_vec()).unwrap();
    cosine_probe_update(&mut acc, &tx, &ty, &vec![true; shape[0] * shape[1]]).unwrap();
    acc.value().unwrap()
}

fn gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Random `[b, l, d]` pair where each position's `y` is `x` rotated to
/// cosine `c`: `y = c x̂ + sqrt(1 - c²) ŵ` with `ŵ ⟂ x̂`, rescaled.
fn pair_with_cosines(rng: &mut Rng, shape: [usize; 3], cosines: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = shape[2];
    let rows = shape[0] * shape[1];
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for r in 0..rows {
        let x = gaussian(rng, d);
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let xh: Vec<f64> = x.iter().map(|v| v / nx).collect();
        let mut w = gaussian(rng, d);
        let dot: f64 = w.iter().zip(&xh).map(|(a, b)| a * b).sum();
        w.iter_mut().zip(&xh).for_each(|(a, b)| *a -= dot * b);
        let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let c = cosines[r % cosines.len()];
        let s = (1.0 - c * c).sqrt();
        let scale: f64 = rng.random_range(0.5..3.0);
        xs.extend(&x);
        ys.extend(xh.iter().zip(&w).map(|(a, b)| scale * (c * a + s * b / nw)));
    }
    (xs, ys)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ProbeErrors {
    pub orthogonal: f64,
    pub identical: f64,
    pub mixed: f64,
    pub scale: f64,
}

/// Largest deviation from the known values over `trials` random shapes.
/// Orthogonal and identical cases are checked exactly; the mixed case
/// (half the positions at +0.6, half at -0.6) and scale invariance to
/// roundoff.
pub fn probe_errors(rng: &mut Rng, trials: usize) -> ProbeErrors {
    let mut e = ProbeErrors::default();
    for _ in 0..trials {
        let shape = [rng.random_range(1..4), rng.random_range(1..6), rng.random_range(2..9)];
        let n: usize = shape.iter().product();
        let rows = shape[0] * shape[1];
        let d = shape[2];

        // Orthogonal by construction: disjoint coordinate supports.
        let split = rng.random_range(1..d);
        let mut x = gaussian(rng, n);
        let mut y = gaussian(rng, n);
        for r in 0..rows {
            x[r * d + split..(r + 1) * d].iter_mut().for_each(|v| *v = 0.0);
            y[r * d..r * d + split].iter_mut().for_each(|v| *v = 0.0);
            x[r * d] = 1.0 + x[r * d].abs();
            y[(r + 1) * d - 1] = 1.0 + y[(r + 1) * d - 1].abs();
        }
        e.orthogonal = e.orthogonal.max(probe(&x, &y, shape).abs());

        let x = gaussian(rng, n);
        e.identical = e.identical.max((probe(&x, &x, shape) - 1.0).abs());

        let (x, y) = pair_with_cosines(rng, shape, &[0.6, -0.6]);
        e.mixed = e.mixed.max((probe(&x, &y, shape) - 0.6).abs());

        let (x, y) = pair_with_cosines(rng, shape, &[0.1, -0.9, 0.35]);
        let base = probe(&x, &y, shape);
        for c in [1e-3, 0.5, 7.0, 1e3, -2.5] {
            let xs: Vec<f64> = x.iter().map(|v| c * v).collect();
            e.scale = e.scale.max((probe(&xs, &y, shape) - base).abs());
            e.scale = e.scale.max((probe(&x, &xs, shape) - probe(&x, &x, shape)).abs());
        }
    }
    e
}
