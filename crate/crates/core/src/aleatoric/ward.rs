//! Agglomerative clustering under Ward's criterion.
//!
//! The merge cost between clusters `A` and `B` is the increase in total
//! within-cluster sum of squares,
//! `|A||B| / (|A| + |B|) * ||mean(A) - mean(B)||^2`. Costs are maintained with
//! the Lance–Williams recurrence, so member means are never recomputed.
//!
//! Ties between equal-cost pairs go to the lexicographically smallest pair of
//! cluster representatives, where a cluster's representative is its smallest
//! member index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One agglomeration step. `left < right` are the representatives of the two
/// merged clusters; the merged cluster is represented by `left`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub cost: f64,
    pub size: usize,
}

/// Full merge sequence over `n` points.
#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    n: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Partition after merging down to `k` clusters. Cluster indices are
    /// `0..k`, numbered in order of each cluster's smallest member.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        if k < 1 || k > self.n {
            return Err(Error::InvalidArgument(format!(
                "cannot cut {} points into {k} clusters",
                self.n
            )));
        }
        // Each point walks to its representative through the applied merges.
        let mut parent: Vec<usize> = (0..self.n).collect();
        for m in &self.merges[..self.n - k] {
            parent[m.right] = m.left;
        }
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut out = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut root = i;
            while parent[root] != root {
                root = parent[root];
            }
            if label[root] == usize::MAX {
                label[root] = next;
                next += 1;
            }
            out.push(label[root]);
        }
        Ok(out)
    }
}

pub(crate) fn validate_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map_or(0, Vec::len);
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "point {i} has dimension {} but expected {dim}",
                p.len()
            )));
        }
        if p.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument(format!("point {i} contains NaN")));
        }
    }
    Ok(dim)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Upper-triangular cost matrix without the diagonal.
struct Condensed {
    n: usize,
    data: Vec<f64>,
}

impl Condensed {
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    fn get(&self, a: usize, b: usize) -> f64 {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        self.data[self.idx(i, j)]
    }

    fn set(&mut self, a: usize, b: usize, v: f64) {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        let k = self.idx(i, j);
        self.data[k] = v;
    }
}

const NONE: usize = usize::MAX;

/// Builds the complete Ward merge sequence.
pub fn ward_linkage(points: &[Vec<f64>]) -> Result<Dendrogram> {
    validate_points(points)?;
    let n = points.len();
    let mut cost = Condensed {
        n,
        data: Vec::with_capacity(n * n.saturating_sub(1) / 2),
    };
    for i in 0..n {
        for j in i + 1..n {
            cost.data.push(0.5 * squared_distance(&points[i], &points[j]));
        }
    }

    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    // Cheapest partner with a larger index for each active row.
    let mut nn = vec![NONE; n];
    let mut nn_cost = vec![f64::INFINITY; n];

    let refresh = |row: usize, active: &[bool], cost: &Condensed, nn: &mut [usize], nn_cost: &mut [f64]| {
        nn[row] = NONE;
        nn_cost[row] = f64::INFINITY;
        for j in row + 1..n {
            if active[j] {
                let c = cost.get(row, j);
                if nn[row] == NONE || c < nn_cost[row] {
                    nn[row] = j;
                    nn_cost[row] = c;
                }
            }
        }
    };
    for i in 0..n {
        refresh(i, &active, &cost, &mut nn, &mut nn_cost);
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let mut best = NONE;
        for i in 0..n {
            if active[i] && nn[i] != NONE && (best == NONE || nn_cost[i] < nn_cost[best]) {
                best = i;
            }
        }
        let (a, b) = (best, nn[best]);
        let ab = nn_cost[a];
        let (na, nb) = (size[a] as f64, size[b] as f64);

        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let nk = size[k] as f64;
            let updated =
                ((na + nk) * cost.get(a, k) + (nb + nk) * cost.get(b, k) - nk * ab) / (na + nb + nk);
            cost.set(a, k, updated);
        }
        active[b] = false;
        size[a] += size[b];
        merges.push(Merge {
            left: a,
            right: b,
            cost: ab,
            size: size[a],
        });

        refresh(a, &active, &cost, &mut nn, &mut nn_cost);
        for k in 0..n {
            if !active[k] || k == a {
                continue;
            }
            if k < a {
                if nn[k] == a || nn[k] == b {
                    refresh(k, &active, &cost, &mut nn, &mut nn_cost);
                } else {
                    let c = cost.get(k, a);
                    if c < nn_cost[k] || (c == nn_cost[k] && a < nn[k]) {
                        nn[k] = a;
                        nn_cost[k] = c;
                    }
                }
            } else if k < b && nn[k] == b {
                refresh(k, &active, &cost, &mut nn, &mut nn_cost);
            }
        }
    }
    Ok(Dendrogram { n, merges })
}

/// Ward clustering of `points` into exactly `k` clusters.
pub fn ward_cluster(points: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    if k < 1 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "cluster count {k} must lie in [1, {}]",
            points.len()
        )));
    }
    ward_linkage(points)?.cut(k)
}
