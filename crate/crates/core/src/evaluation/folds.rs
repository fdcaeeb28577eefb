//! Stratified k-fold partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::datamodel::EegDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratification {
    Exemplar,
    /// Used when some exemplar has fewer than `k` trials.
    Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub n_trials: usize,
    pub stratification: Stratification,
    /// Test indices of each fold, ascending.
    pub test: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Every trial outside fold `f`, ascending.
    pub fn train(&self, f: usize) -> Vec<usize> {
        let mut in_test = vec![false; self.n_trials];
        for &i in &self.test[f] {
            in_test[i] = true;
        }
        (0..self.n_trials).filter(|&i| !in_test[i]).collect()
    }
}

/// Shuffle each stratum with a seeded stream, then deal all strata in turn
/// onto the folds round-robin. The running dealer position carries over
/// between strata, so fold sizes differ by at most one.
pub fn make_folds(d: &EegDataset, k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    let n = d.n_trials();
    if k < 2 || k > n {
        return Err(EvalError::Folds(format!("cannot split {n} trials into {k} folds")));
    }
    let exemplars: Vec<usize> = d.exemplar_labels().iter().map(|&e| usize::from(e)).collect();
    let mut counts = std::collections::BTreeMap::new();
    for &e in &exemplars {
        *counts.entry(e).or_insert(0usize) += 1;
    }
    let (stratification, keys) = if counts.values().all(|&c| c >= k) {
        (Stratification::Exemplar, exemplars)
    } else {
        log::warn!("some exemplar has fewer than {k} trials; stratifying by category");
        (Stratification::Category, d.category_labels())
    };
    let n_keys = keys.iter().max().map_or(0, |&m| m + 1);
    let mut strata = vec![Vec::new(); n_keys];
    for (i, &key) in keys.iter().enumerate() {
        strata[key].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = vec![Vec::new(); k];
    let mut dealer = 0;
    for stratum in &mut strata {
        stratum.shuffle(&mut rng);
        for &i in stratum.iter() {
            test[dealer % k].push(i);
            dealer += 1;
        }
    }
    for fold in &mut test {
        fold.sort_unstable();
    }
    Ok(FoldPlan {
        k,
        seed,
        n_trials: n,
        stratification,
        test,
    })
}
