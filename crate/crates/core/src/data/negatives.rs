use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// `k` distinct ids drawn uniformly without replacement from
/// `{1..=vocab} \ exclude`.
pub fn sample_negatives(vocab: usize, exclude: &HashSet<usize>, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let excluded = exclude.iter().filter(|&&i| (1..=vocab).contains(&i)).count();
    let available = vocab - excluded;
    if available < k {
        return Err(Error::Sampling(format!(
            "{available} candidates left after exclusions, {k} requested"
        )));
    }
    if 2 * k >= available {
        let mut pool: Vec<usize> = (1..=vocab).filter(|i| !exclude.contains(i)).collect();
        let (chosen, _) = pool.partial_shuffle(rng, k);
        return Ok(chosen.to_vec());
    }
    let mut seen = HashSet::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let i = rng.random_range(1..=vocab);
        if !exclude.contains(&i) && seen.insert(i) {
            out.push(i);
        }
    }
    Ok(out)
}
