//! Stratified k-fold assignment over bags.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// Deal bags into `k` folds so every fold sees both classes.
///
/// Positives and negatives are shuffled independently (streams
/// `kfold/pos` and `kfold/neg` off the master seed), then dealt
/// round-robin; fold `f` takes every k-th bag of each class starting at
/// offset `f`. Returns the test-fold index lists, each sorted.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidParameter {
            name: "k_folds",
            reason: format!("need at least 2 folds, got {k}"),
        });
    }
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match l {
            1 => pos.push(i),
            0 => neg.push(i),
            other => {
                return Err(Error::InvalidInput(format!(
                    "bag {i}: label must be 0 or 1, got {other}"
                )))
            }
        }
    }
    for (name, class) in [("positive", &pos), ("negative", &neg)] {
        if class.len() < k {
            return Err(Error::InvalidInput(format!(
                "{name} class has {} bags but k = {k}; every fold needs both classes",
                class.len()
            )));
        }
    }
    pos.shuffle(&mut derive_rng(seed, "kfold/pos"));
    neg.shuffle(&mut derive_rng(seed, "kfold/neg"));
    let mut folds = vec![Vec::new(); k];
    for (i, &idx) in pos.iter().enumerate() {
        folds[i % k].push(idx);
    }
    for (i, &idx) in neg.iter().enumerate() {
        folds[i % k].push(idx);
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn labels(n_pos: usize, n_neg: usize) -> Vec<u8> {
        // interleave so class and index are not correlated
        let mut out = Vec::new();
        let (mut p, mut n) = (n_pos, n_neg);
        while p > 0 || n > 0 {
            if p > 0 {
                out.push(1);
                p -= 1;
            }
            if n > 0 {
                out.push(0);
                n -= 1;
            }
        }
        out
    }

    #[test]
    fn folds_partition_the_bags() {
        let l = labels(7, 13);
        let folds = stratified_kfold(&l, 5, 42).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = BTreeSet::new();
        for fold in &folds {
            for &i in fold {
                assert!(seen.insert(i), "bag {i} in two folds");
            }
        }
        assert_eq!(seen.len(), 20);
    }

    #[test]
    fn class_counts_follow_round_robin_dealing() {
        // 7 positives over 5 folds deal as 2,2,1,1,1; 13 negatives as 3,3,3,2,2
        let l = labels(7, 13);
        let folds = stratified_kfold(&l, 5, 42).unwrap();
        let mut pos_counts: Vec<usize> = folds
            .iter()
            .map(|f| f.iter().filter(|&&i| l[i] == 1).count())
            .collect();
        let mut neg_counts: Vec<usize> = folds
            .iter()
            .map(|f| f.iter().filter(|&&i| l[i] == 0).count())
            .collect();
        assert_eq!(pos_counts[0], 2);
        assert_eq!(neg_counts[0], 3);
        pos_counts.sort_unstable();
        neg_counts.sort_unstable();
        assert_eq!(pos_counts, vec![1, 1, 1, 2, 2]);
        assert_eq!(neg_counts, vec![2, 2, 3, 3, 3]);
    }

    #[test]
    fn same_seed_same_folds_different_seed_different_folds() {
        let l = labels(20, 30);
        let a = stratified_kfold(&l, 5, 7).unwrap();
        let b = stratified_kfold(&l, 5, 7).unwrap();
        assert_eq!(a, b);
        let c = stratified_kfold(&l, 5, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn deficient_class_is_named_in_the_error() {
        let err = stratified_kfold(&labels(3, 40), 5, 0).unwrap_err();
        assert!(err.to_string().contains("positive"), "{err}");
        let err = stratified_kfold(&labels(40, 3), 5, 0).unwrap_err();
        assert!(err.to_string().contains("negative"), "{err}");
    }

    #[test]
    fn rejects_bad_k_and_bad_labels() {
        assert!(stratified_kfold(&labels(5, 5), 1, 0).is_err());
        assert!(stratified_kfold(&[0, 1, 2, 1], 2, 0).is_err());
    }
}
