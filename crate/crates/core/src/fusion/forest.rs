//! Bagged random forest of Gini trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{Grower, Node};
use crate::corpus::Label;
use crate::error::{Error, Result};

/// Trees per forest unless configured otherwise.
pub const DEFAULT_TREES: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: Node,
    /// Training indices drawn for this tree, kept for audit.
    pub bootstrap: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub n_trees: usize,
    pub seed: u64,
    pub n_features: usize,
    pub feature_subsample: usize,
    pub trees: Vec<DecisionTree>,
}

/// Per-tree generator: ChaCha8 keyed by the forest seed, one stream per tree,
/// so a tree's randomness does not depend on scheduling.
fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Features considered per split: `ceil(sqrt(d))`.
pub fn default_feature_subsample(n_features: usize) -> usize {
    ((n_features as f64).sqrt().ceil() as usize).max(1)
}

/// Trains `n_trees` trees, each on a bootstrap resample of size `n`.
pub fn train_ensemble(
    features: &[Vec<f64>],
    labels: &[Label],
    n_trees: usize,
    seed: u64,
) -> Result<TreeEnsemble> {
    if features.len() != labels.len() {
        return Err(Error::Training(format!(
            "{} feature vectors but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if n_trees == 0 {
        return Err(Error::Training("forest needs at least one tree".into()));
    }
    let n_features = features.first().map_or(0, Vec::len);
    if n_features == 0 {
        return Err(Error::Training("no features".into()));
    }
    if let Some(i) = features.iter().position(|f| f.len() != n_features) {
        return Err(Error::Training(format!(
            "feature vector {i} has arity {} but expected {n_features}",
            features[i].len()
        )));
    }
    if features.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::Training("NaN feature value".into()));
    }
    let pos = labels.iter().filter(|l| l.is_correct()).count();
    let neg = labels.len() - pos;
    if pos < 2 || neg < 2 {
        return Err(Error::Training(format!(
            "need at least 2 examples per class, got {neg} incorrect and {pos} correct"
        )));
    }

    let n = features.len();
    let mtry = default_feature_subsample(n_features);
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let mut sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let bootstrap = sample.iter().map(|&i| i as u32).collect();
            let root = Grower {
                x: features,
                y: labels,
                mtry,
                rng: &mut rng,
            }
            .grow(&mut sample);
            DecisionTree { root, bootstrap }
        })
        .collect();

    Ok(TreeEnsemble {
        n_trees,
        seed,
        n_features,
        feature_subsample: mtry,
        trees,
    })
}

impl TreeEnsemble {
    /// Mean over trees of the positive-class frequency at the reached leaf.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::InvalidArgument(format!(
                "feature arity {} does not match forest arity {}",
                x.len(),
                self.n_features
            )));
        }
        let total: f64 = self.trees.iter().map(|t| t.root.positive_rate(x)).sum();
        Ok(total / self.trees.len() as f64)
    }
}

/// Free-function form of [`TreeEnsemble::score`].
pub fn ensemble_score(ensemble: &TreeEnsemble, x: &[f64]) -> Result<f64> {
    ensemble.score(x)
}
