//! Choosing the number of clusters by mean silhouette coefficient.

use serde::{Deserialize, Serialize};

use super::ward::{squared_distance, validate_points, ward_linkage};
use crate::error::{Error, Result};

/// Outcome of [`choose_k`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    /// Mean silhouette for every grid value, `None` when undefined.
    pub scores: Vec<(usize, Option<f64>)>,
    /// Set when no silhouette was defined and the smallest grid value was used.
    pub degenerate: bool,
}

/// `{2, 4, 8, ...}` up to `min(64, n / 5)`, or `{2}` when that range is empty.
pub fn default_k_grid(n: usize) -> Result<Vec<usize>> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 points to choose a cluster count, got {n}"
        )));
    }
    let cap = (n / 5).min(64);
    let grid: Vec<usize> = std::iter::successors(Some(2usize), |k| Some(k * 2))
        .take_while(|&k| k <= cap)
        .collect();
    Ok(if grid.is_empty() { vec![2] } else { grid })
}

fn distance_matrix(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = squared_distance(&points[i], &points[j]).sqrt();
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

fn silhouette_from_distances(dist: &[Vec<f64>], labels: &[usize]) -> Option<f64> {
    let n = labels.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 || k >= n {
        return None;
    }
    let mut sizes = vec![0usize; k];
    for &c in labels {
        sizes[c] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            sums[labels[j]] += dist[i][j];
        }
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Some(total / n as f64)
}

/// Mean silhouette coefficient (Euclidean) of a labelling. Members of
/// singleton clusters score 0. `None` unless `2 <= k < n`.
pub fn silhouette_score(points: &[Vec<f64>], labels: &[usize]) -> Result<Option<f64>> {
    validate_points(points)?;
    if points.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    Ok(silhouette_from_distances(&distance_matrix(points), labels))
}

/// Picks the grid value with the highest mean silhouette of the Ward
/// partition; ties go to the smallest K. When every point coincides the
/// silhouette is undefined and the smallest grid value is returned with
/// `degenerate` set.
pub fn choose_k(points: &[Vec<f64>], k_grid: &[usize]) -> Result<KSelection> {
    if k_grid.is_empty() {
        return Err(Error::InvalidArgument("empty cluster-count grid".into()));
    }
    let n = points.len();
    if let Some(&bad) = k_grid.iter().find(|&&k| k < 2 || k + 1 > n) {
        return Err(Error::InvalidArgument(format!(
            "grid value {bad} outside [2, {}]",
            n.saturating_sub(1)
        )));
    }
    let mut grid = k_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();

    let dendrogram = ward_linkage(points)?;
    let dist = distance_matrix(points);
    let all_identical = dist.iter().flatten().all(|&d| d == 0.0);

    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    for &k in &grid {
        let score = if all_identical {
            None
        } else {
            silhouette_from_distances(&dist, &dendrogram.cut(k)?)
        };
        if let Some(s) = score {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((k, s));
            }
        }
        scores.push((k, score));
    }
    Ok(match best {
        Some((k, _)) => KSelection {
            k,
            scores,
            degenerate: false,
        },
        None => KSelection {
            k: grid[0],
            scores,
            degenerate: true,
        },
    })
}
