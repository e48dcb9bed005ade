//! Validation holdout and stratified k-fold plans. All index lists refer to
//! positions in the dataset's sample vector.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutSplit {
    pub validation: Vec<usize>,
    pub pool: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub validation: Vec<usize>,
    pub folds: Vec<Fold>,
}

fn by_class(ds: &Dataset, indices: impl IntoIterator<Item = usize>) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); ds.n_classes()];
    for i in indices {
        groups[ds.samples[i].label].push(i);
    }
    groups
}

/// Draws exactly `per_class` samples of every class for validation.
pub fn split_holdout(ds: &Dataset, per_class: usize, seed: u64) -> Result<HoldoutSplit, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut validation = Vec::new();
    let mut pool = Vec::new();
    for (class, mut members) in by_class(ds, 0..ds.len()).into_iter().enumerate() {
        if per_class > 0 && members.len() <= per_class {
            return Err(DataError::InsufficientClass {
                class: ds.class_names[class].clone(),
                have: members.len(),
                need: per_class + 1,
            });
        }
        members.shuffle(&mut rng);
        validation.extend_from_slice(&members[..per_class]);
        pool.extend_from_slice(&members[per_class..]);
    }
    validation.sort_unstable();
    pool.sort_unstable();
    Ok(HoldoutSplit { validation, pool })
}

/// Class-wise shuffled round-robin over `k` folds. A single counter runs across
/// all classes, so fold sizes differ by at most one overall and per class.
pub fn stratified_folds(ds: &Dataset, split: &HoldoutSplit, k: usize, seed: u64) -> Result<FoldPlan, DataError> {
    if k < 2 {
        return Err(DataError::InvalidConfig(format!("k must be >= 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests = vec![Vec::new(); k];
    let mut counter = 0;
    for (class, mut members) in by_class(ds, split.pool.iter().copied()).into_iter().enumerate() {
        if members.len() < k {
            return Err(DataError::InsufficientClass {
                class: ds.class_names[class].clone(),
                have: members.len(),
                need: k,
            });
        }
        members.shuffle(&mut rng);
        for i in members {
            tests[counter % k].push(i);
            counter += 1;
        }
    }
    let folds = tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train = split
                .pool
                .iter()
                .copied()
                .filter(|i| test.binary_search(i).is_err())
                .collect();
            Fold { train, test }
        })
        .collect();
    Ok(FoldPlan {
        k,
        validation: split.validation.clone(),
        folds,
    })
}
