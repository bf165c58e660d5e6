//! Stratified k-fold splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::error::EvalError;

/// Split instance indices into `k` folds preserving class proportions: the
/// indices of each class are shuffled (seeded) and dealt round-robin, so the
/// per-class counts of any two folds differ by at most one. Fails when any
/// class has fewer than `k` members.
pub fn stratified_kfold<S: AsRef<str>>(
    labels: &[S],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::BadFoldCount(k));
    }
    // class order is sorted, not first-seen, so splits do not depend on row
    // order of the target table
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.as_ref()).or_default().push(i);
    }
    let smallest = by_class.values().map(Vec::len).min().unwrap_or(0);
    if smallest < k {
        return Err(EvalError::TooFewInstances { k, needed: k, smallest });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        for (i, idx) in members.into_iter().enumerate() {
            folds[i % k].push(idx);
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// All indices not in `fold` — the training side of a split.
pub fn complement(folds: &[Vec<usize>], fold: usize) -> Vec<usize> {
    let mut out: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != fold)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    out.sort_unstable();
    out
}
