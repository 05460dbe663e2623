//! Axis-aligned binary classification trees grown on Gini impurity.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;

/// A tree node. Samples with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Leaf {
        neg: u32,
        pos: u32,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    /// Leaf reached by `x`.
    pub fn route(&self, x: &[f64]) -> &Node {
        let mut node = self;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
        } = node
        {
            node = if x[*feature] <= *threshold { left } else { right };
        }
        node
    }

    /// Positive-class frequency of the leaf reached by `x`.
    pub fn positive_rate(&self, x: &[f64]) -> f64 {
        match self.route(x) {
            Node::Leaf { neg, pos } => *pos as f64 / (*neg + *pos) as f64,
            Node::Split { .. } => unreachable!("route always ends at a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// `(neg, pos)` totals over all leaves.
    pub fn leaf_totals(&self) -> (u64, u64) {
        match self {
            Node::Leaf { neg, pos } => (*neg as u64, *pos as u64),
            Node::Split { left, right, .. } => {
                let (a, b) = left.leaf_totals();
                let (c, d) = right.leaf_totals();
                (a + c, b + d)
            }
        }
    }
}

pub(crate) struct Grower<'a, R> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [Label],
    pub mtry: usize,
    pub rng: &'a mut R,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<R: Rng> Grower<'_, R> {
    /// Grows a tree over `sample`, which may contain repeated indices.
    pub fn grow(&mut self, sample: &mut [usize]) -> Node {
        let (neg, pos) = counts(self.y, sample);
        if neg == 0 || pos == 0 || sample.len() < 2 {
            return Node::Leaf {
                neg: neg as u32,
                pos: pos as u32,
            };
        }
        let Some(split) = self.best_split(sample) else {
            return Node::Leaf {
                neg: neg as u32,
                pos: pos as u32,
            };
        };
        let mut left: Vec<usize> = Vec::with_capacity(sample.len());
        let mut right: Vec<usize> = Vec::with_capacity(sample.len());
        for &i in sample.iter() {
            if self.x[i][split.feature] <= split.threshold {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(self.grow(&mut left)),
            right: Box::new(self.grow(&mut right)),
        }
    }

    /// Examines `mtry` randomly chosen features, continuing through the rest
    /// only while no valid split has been found.
    fn best_split(&mut self, sample: &mut [usize]) -> Option<Candidate> {
        let d = self.x[sample[0]].len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(self.rng);
        let mut best: Option<Candidate> = None;
        for (t, &feature) in order.iter().enumerate() {
            if t >= self.mtry && best.is_some() {
                break;
            }
            if let Some(c) = self.best_threshold(sample, feature) {
                if best.as_ref().is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        best
    }

    /// Maximizes `sum_child (neg^2 + pos^2) / n_child`, which is equivalent to
    /// minimizing the size-weighted Gini impurity of the children.
    fn best_threshold(&self, sample: &mut [usize], feature: usize) -> Option<Candidate> {
        let x = self.x;
        sample.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]));
        let (neg, pos) = counts(self.y, sample);
        let n = sample.len();
        let (mut ln, mut lp) = (0usize, 0usize);
        let mut best: Option<Candidate> = None;
        for p in 1..n {
            match self.y[sample[p - 1]] {
                Label::Incorrect => ln += 1,
                Label::Correct => lp += 1,
            }
            let lo = x[sample[p - 1]][feature];
            let hi = x[sample[p]][feature];
            if lo >= hi {
                continue;
            }
            let (rn, rp) = (neg - ln, pos - lp);
            let nl = p as f64;
            let nr = (n - p) as f64;
            let score = ((ln * ln + lp * lp) as f64) / nl + ((rn * rn + rp * rp) as f64) / nr;
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(Candidate {
                    feature,
                    threshold: midpoint(lo, hi),
                    score,
                });
            }
        }
        best
    }
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi && m >= lo {
        m
    } else {
        lo
    }
}

fn counts(y: &[Label], sample: &[usize]) -> (usize, usize) {
    let pos = sample.iter().filter(|&&i| y[i].is_correct()).count();
    (sample.len() - pos, pos)
}
