use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means `ceil(p / 3)`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
        samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, samples } => Some((*value, *samples)),
            Node::Split { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

/// Mean of `values`, insensitive to their order and kept inside their range.
fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    m.clamp(values[0], values[values.len() - 1])
}

impl ForestParams {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut outs: Vec<f64> = self.trees.iter().map(|t| t.predict_row(x)).collect();
        stable_mean(&mut outs)
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let mut vals: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
        self.nodes.push(Node::Leaf {
            value: stable_mean(&mut vals),
            samples: idx.len(),
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf || pure {
            return self.leaf(&idx);
        }
        let Some(best) = self.best_split(&idx, rng) else {
            return self.leaf(&idx);
        };
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: 0.0,
            samples: 0,
        });
        let left = self.grow(best.left, depth + 1, rng);
        let right = self.grow(best.right, depth + 1, rng);
        self.nodes[slot] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        slot
    }

    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let p = self.x.ncols();
        let mut features: Vec<usize> = (0..p).collect();
        features.shuffle(rng);
        let n = idx.len();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut visited = 0;
        let mut order = idx.to_vec();
        for &f in &features {
            if visited >= self.mtry {
                break;
            }
            order.sort_by(|&a, &b| {
                self.x
                    .get(a, f)
                    .total_cmp(&self.x.get(b, f))
                    .then(a.cmp(&b))
            });
            let lo = self.x.get(order[0], f);
            let hi = self.x.get(order[n - 1], f);
            if lo == hi {
                continue;
            }
            visited += 1;
            let total: f64 = order.iter().map(|&i| self.y[i]).sum();
            let total_sq: f64 = order.iter().map(|&i| self.y[i] * self.y[i]).sum();
            let (mut s, mut sq) = (0.0, 0.0);
            for k in 0..n - 1 {
                let yi = self.y[order[k]];
                s += yi;
                sq += yi * yi;
                let nl = k + 1;
                let nr = n - nl;
                if nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let a = self.x.get(order[k], f);
                let b = self.x.get(order[k + 1], f);
                if a == b {
                    continue;
                }
                let sse_l = sq - s * s / nl as f64;
                let sse_r = (total_sq - sq) - (total - s) * (total - s) / nr as f64;
                let impurity = sse_l + sse_r;
                if best.is_none_or(|(_, _, bi)| impurity < bi) {
                    let mut thr = a + (b - a) / 2.0;
                    if thr >= b {
                        thr = a;
                    }
                    best = Some((f, thr, impurity));
                }
            }
        }
        let (feature, threshold, impurity) = best?;
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x.get(i, feature) <= threshold);
        Some(BestSplit {
            feature,
            threshold,
            impurity,
            left,
            right,
        })
        .filter(|b| b.impurity.is_finite())
    }
}

pub fn fit_tree(
    x: &Matrix,
    y: &[f64],
    idx: Vec<usize>,
    cfg: &ForestConfig,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let p = x.ncols();
    let mtry = cfg.max_features.unwrap_or(p.div_ceil(3)).clamp(1, p.max(1));
    let mut b = Builder {
        x,
        y,
        max_depth: cfg.max_depth.unwrap_or(usize::MAX),
        min_leaf: cfg.min_samples_leaf.max(1),
        mtry,
        nodes: Vec::new(),
    };
    b.grow(idx, 0, rng);
    Tree { nodes: b.nodes }
}

/// Random forest of CART regression trees. Tree `t` draws from the ChaCha8 stream
/// `t` of `seed`, so the forest does not depend on scheduling.
pub fn fit_forest(x: &Matrix, y: &[f64], cfg: &ForestConfig, seed: u64) -> Result<ForestParams> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::Argument(format!("{} targets for {n} rows", y.len())));
    }
    if cfg.n_trees == 0 {
        return Err(Error::Argument("n_trees must be at least 1".into()));
    }
    if cfg.min_samples_leaf == 0 {
        return Err(Error::Argument(
            "min_samples_leaf must be at least 1".into(),
        ));
    }
    if n < 2 * cfg.min_samples_leaf {
        return Err(Error::Argument(format!(
            "{n} rows cannot satisfy min_samples_leaf = {}",
            cfg.min_samples_leaf
        )));
    }
    if cfg.max_depth == Some(0) {
        return Err(Error::Argument("max_depth must be at least 1".into()));
    }
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let idx = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree(x, y, idx, cfg, &mut rng)
        })
        .collect();
    Ok(ForestParams {
        trees,
        n_features: x.ncols(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_data() -> (Matrix, Vec<f64>) {
        let xs = [0.05, 0.1, 0.2, 0.33, 0.41, 0.62, 0.7, 0.85, 0.9];
        let y = xs
            .iter()
            .map(|&v| if v < 0.5 { 0.0 } else { 1.0 })
            .collect();
        (Matrix::new(xs.len(), 1, xs.to_vec()).unwrap(), y)
    }

    #[test]
    fn stump_splits_between_classes() {
        let (x, y) = step_data();
        let cfg = ForestConfig {
            n_trees: 1,
            max_depth: Some(1),
            bootstrap: false,
            ..Default::default()
        };
        let f = fit_forest(&x, &y, &cfg, 1).unwrap();
        match f.trees[0].nodes[0] {
            Node::Split { threshold, .. } => assert!(threshold > 0.41 && threshold <= 0.62),
            ref n => panic!("expected split, got {n:?}"),
        }
        assert_eq!(f.predict_row(&[0.2]), 0.0);
        assert_eq!(f.predict_row(&[0.8]), 1.0);
    }

    #[test]
    fn constant_target_predicts_constant() {
        let x = Matrix::from_rows(
            &(0..30)
                .map(|i| vec![i as f64, (i % 4) as f64])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let y = vec![0.1 + 0.2; 30];
        let f = fit_forest(&x, &y, &ForestConfig::default(), 9).unwrap();
        for i in 0..30 {
            assert_eq!(f.predict_row(x.row(i)), 0.1 + 0.2);
        }
    }

    #[test]
    fn leaves_respect_min_samples() {
        let x = Matrix::from_rows(
            &(0..40)
                .map(|i| vec![(i * 7 % 13) as f64, i as f64])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let y: Vec<f64> = (0..40).map(|i| ((i * 5) % 11) as f64).collect();
        let cfg = ForestConfig {
            n_trees: 10,
            min_samples_leaf: 3,
            max_depth: Some(4),
            ..Default::default()
        };
        let f = fit_forest(&x, &y, &cfg, 4).unwrap();
        for t in &f.trees {
            assert!(t.leaves().all(|(_, s)| s >= 3));
            assert!(t.depth() <= 4);
        }
    }

    #[test]
    fn rejects_too_few_rows() {
        let x = Matrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let cfg = ForestConfig {
            min_samples_leaf: 2,
            ..Default::default()
        };
        assert!(matches!(
            fit_forest(&x, &[1.0, 2.0, 3.0], &cfg, 0),
            Err(Error::Argument(_))
        ));
    }
}
