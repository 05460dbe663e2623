//! Dataset-derived (aleatoric) uncertainty.
//!
//! Calibration responses are clustered in embedding space with Ward linkage.
//! Each cluster's gold-label distribution gives a normalized Shannon entropy:
//! 0 when semantically similar responses always receive the same grade, 1 when
//! the grades are evenly split. Unseen responses take the entropy of the
//! cluster whose centroid is nearest in Euclidean distance.

mod select;
mod ward;

use std::borrow::Borrow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, ResponseRecord};
use crate::error::{Error, Result};

pub use select::{choose_k, default_k_grid, silhouette_score, KSelection};
pub use ward::{ward_cluster, ward_linkage, Dendrogram, Merge};

/// Probability of each label, indexed by [`Label::index`].
pub type LabelDist = [f64; 2];

/// Fitted partition of the calibration subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub entropies: Vec<f64>,
    pub label_dists: Vec<LabelDist>,
    /// Calibration record id to cluster index in `0..k`.
    pub assignments: BTreeMap<String, usize>,
}

/// Empirical label frequencies within each of `k` clusters.
pub fn cluster_label_distribution(
    assignments: &[usize],
    gold_labels: &[Label],
    k: usize,
) -> Result<Vec<LabelDist>> {
    if assignments.len() != gold_labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} assignments but {} labels",
            assignments.len(),
            gold_labels.len()
        )));
    }
    let mut counts = vec![[0usize; 2]; k];
    for (&c, &y) in assignments.iter().zip(gold_labels) {
        let slot = counts.get_mut(c).ok_or_else(|| {
            Error::InvalidArgument(format!("cluster index {c} out of range for k = {k}"))
        })?;
        slot[y.index()] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(c, [neg, pos])| {
            let total = neg + pos;
            if total == 0 {
                return Err(Error::InvalidArgument(format!("cluster {c} is empty")));
            }
            Ok([*neg as f64 / total as f64, *pos as f64 / total as f64])
        })
        .collect()
}

/// Shannon entropy of `dist` divided by the log of the number of labels.
/// Zero-probability terms contribute nothing.
pub fn cluster_entropy(dist: &[f64]) -> f64 {
    if dist.len() < 2 {
        return 0.0;
    }
    let h: f64 = dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    (h / (dist.len() as f64).ln()).clamp(0.0, 1.0)
}

fn centroids(points: &[&[f64]], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points.first().map_or(0, |p| p.len());
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignments) {
        counts[c] += 1;
        for (acc, v) in sums[c].iter_mut().zip(p.iter()) {
            *acc += v;
        }
    }
    for (s, n) in sums.iter_mut().zip(counts) {
        for v in s.iter_mut() {
            *v /= n as f64;
        }
    }
    sums
}

/// Clusters the calibration records into `k` groups and records centroids,
/// label distributions and entropies.
pub fn fit<R: Borrow<ResponseRecord>>(records: &[R], k: usize) -> Result<ClusterModel> {
    let embeddings: Vec<Vec<f64>> = records.iter().map(|r| r.borrow().embedding.clone()).collect();
    let assignments = ward_cluster(&embeddings, k)?;
    fit_with_assignments(records, &assignments, k)
}

/// Like [`fit`], but with a partition that was already computed (for example
/// from a cached dendrogram).
pub fn fit_with_assignments<R: Borrow<ResponseRecord>>(
    records: &[R],
    assignments: &[usize],
    k: usize,
) -> Result<ClusterModel> {
    let labels: Vec<Label> = records.iter().map(|r| r.borrow().gold_label).collect();
    let label_dists = cluster_label_distribution(assignments, &labels, k)?;
    let entropies = label_dists.iter().map(|d| cluster_entropy(d)).collect();
    let points: Vec<&[f64]> = records.iter().map(|r| r.borrow().embedding.as_slice()).collect();
    let centroids = centroids(&points, assignments, k);
    let assignments = records
        .iter()
        .zip(assignments)
        .map(|(r, &c)| (r.borrow().id.clone(), c))
        .collect();
    Ok(ClusterModel {
        k,
        centroids,
        entropies,
        label_dists,
        assignments,
    })
}

impl ClusterModel {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest_cluster(&self, embedding: &[f64]) -> Result<usize> {
        if embedding.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "embedding dimension {} does not match cluster model dimension {}",
                embedding.len(),
                self.dim()
            )));
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in self.centroids.iter().enumerate() {
            let d = ward::squared_distance(embedding, centroid);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        Ok(best)
    }

    /// Aleatoric uncertainty of a calibration member, inherited from its cluster.
    pub fn member_uncertainty(&self, id: &str) -> Option<f64> {
        self.assignments.get(id).map(|&c| self.entropies[c])
    }

    /// Cluster sizes, indexed by cluster.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in self.assignments.values() {
            sizes[c] += 1;
        }
        sizes
    }

    /// Clusters with a single member. Their entropy is always 0 and is a weak estimate.
    pub fn singleton_clusters(&self) -> Vec<usize> {
        self.sizes()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 1)
            .map(|(c, _)| c)
            .collect()
    }

    /// Structural checks for a model read back from disk.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::schema(None, m));
        if self.k == 0
            || self.centroids.len() != self.k
            || self.entropies.len() != self.k
            || self.label_dists.len() != self.k
        {
            return bad(format!("cluster model arrays do not all have length k = {}", self.k));
        }
        let dim = self.dim();
        if self.centroids.iter().any(|c| c.len() != dim) {
            return bad("centroids have inconsistent dimensions".into());
        }
        if self.entropies.iter().any(|h| !(0.0..=1.0).contains(h)) {
            return bad("entropy outside [0, 1]".into());
        }
        if self
            .label_dists
            .iter()
            .any(|d| (d[0] + d[1] - 1.0).abs() > 1e-9 || d.iter().any(|p| *p < 0.0))
        {
            return bad("label distribution does not sum to 1".into());
        }
        if self.assignments.values().any(|&c| c >= self.k) {
            return bad("assignment out of range".into());
        }
        if self.sizes().contains(&0) {
            return bad("empty cluster".into());
        }
        Ok(())
    }
}

/// Entropy of the cluster nearest to `embedding`.
pub fn assign_uncertainty(embedding: &[f64], model: &ClusterModel) -> Result<f64> {
    Ok(model.entropies[model.nearest_cluster(embedding)?])
}
