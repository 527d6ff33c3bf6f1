use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SplitMode {
    /// Rows are taken in the given (time) order.
    Chronological,
    SeededRandom {
        seed: u64,
    },
}

impl Default for SplitMode {
    fn default() -> Self {
        SplitMode::Chronological
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub train_ratio: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Train size is `floor(ratio * n)`. Index lists are ascending in both modes.
pub fn train_test_split(n: usize, ratio: f64, mode: SplitMode) -> Result<SplitPlan> {
    if n < 10 {
        return Err(Error::Argument(format!(
            "need at least 10 rows to split, got {n}"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Argument(format!(
            "train ratio must be in (0, 1), got {ratio}"
        )));
    }
    let k = ((ratio * n as f64) + 1e-9).floor() as usize;
    if k == 0 || k == n {
        return Err(Error::Argument(format!(
            "ratio {ratio} leaves an empty split of {n} rows"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if let SplitMode::SeededRandom { seed } = mode {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut train = idx[..k].to_vec();
    let mut test = idx[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        mode,
        train_ratio: ratio,
        train,
        test,
    })
}

fn fold_sizes(n: usize, k: usize) -> impl Iterator<Item = usize> {
    (0..k).map(move |f| n / k + usize::from(f < n % k))
}

/// Partitions `0..n` into `k` folds whose sizes differ by at most one, the
/// larger folds first. Chronological folds are contiguous.
pub fn kfold(n: usize, k: usize, mode: SplitMode) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Argument(format!("k must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::Argument(format!(
            "cannot make {k} folds from {n} rows"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if let SplitMode::SeededRandom { seed } = mode {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut out = Vec::with_capacity(k);
    let mut at = 0;
    for size in fold_sizes(n, k) {
        let mut fold = idx[at..at + size].to_vec();
        fold.sort_unstable();
        out.push(fold);
        at += size;
    }
    Ok(out)
}

/// Cross-validation (train, validation) pairs.
///
/// Random mode is ordinary k-fold. Chronological mode cuts `k + 1` contiguous
/// blocks and validates block `b` on a model trained on blocks `0..b`, so no
/// training row follows a validation row.
pub fn cv_pairs(n: usize, k: usize, mode: SplitMode) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    match mode {
        SplitMode::SeededRandom { .. } => {
            let folds = kfold(n, k, mode)?;
            Ok((0..k)
                .map(|v| {
                    let mut train: Vec<usize> = folds
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != v)
                        .flat_map(|(_, f)| f.iter().copied())
                        .collect();
                    train.sort_unstable();
                    (train, folds[v].clone())
                })
                .collect())
        }
        SplitMode::Chronological => {
            let blocks = kfold(n, k + 1, mode)?;
            Ok((1..=k)
                .map(|b| (blocks[..b].concat(), blocks[b].clone()))
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventy_thirty() {
        let p = train_test_split(144, 0.7, SplitMode::Chronological).unwrap();
        assert_eq!((p.train.len(), p.test.len()), (100, 44));
        assert_eq!(p.train, (0..100).collect::<Vec<_>>());
        let p = train_test_split(10, 0.7, SplitMode::Chronological).unwrap();
        assert_eq!((p.train.len(), p.test.len()), (7, 3));
    }

    #[test]
    fn random_split_is_seeded() {
        let m = SplitMode::SeededRandom { seed: 42 };
        let a = train_test_split(50, 0.7, m).unwrap();
        assert_eq!(a, train_test_split(50, 0.7, m).unwrap());
        assert_ne!(a.train, (0..35).collect::<Vec<_>>());
    }

    #[test]
    fn fold_sizes_balance() {
        let sizes = |n| {
            kfold(n, 3, SplitMode::Chronological)
                .unwrap()
                .iter()
                .map(Vec::len)
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(10), vec![4, 3, 3]);
        assert_eq!(sizes(9), vec![3, 3, 3]);
        assert!(matches!(
            kfold(2, 3, SplitMode::Chronological),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn chronological_pairs_train_before_validation() {
        for (train, val) in cv_pairs(31, 3, SplitMode::Chronological).unwrap() {
            assert!(train.iter().max() < val.iter().min());
        }
    }

    #[test]
    fn random_pairs_cover_everything() {
        let pairs = cv_pairs(20, 3, SplitMode::SeededRandom { seed: 1 }).unwrap();
        let mut all: Vec<usize> = pairs.iter().flat_map(|(_, v)| v.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        for (t, v) in &pairs {
            assert_eq!(t.len() + v.len(), 20);
        }
    }
}
