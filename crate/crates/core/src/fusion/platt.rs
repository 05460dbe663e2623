//! Platt scaling: `P(correct | f) = 1 / (1 + exp(A * f + B))`.
//!
//! Fitted by Newton's method with backtracking line search on the
//! cross-entropy against Platt's smoothed targets, following the numerically
//! careful formulation of Lin, Lin and Weng.

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-10;
const MIN_STEP: f64 = 1e-10;
const HESSIAN_RIDGE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sigmoid {
    pub a: f64,
    pub b: f64,
}

impl Sigmoid {
    pub fn predict(&self, f: f64) -> f64 {
        let z = self.a * f + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

/// Regression targets for the sigmoid fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlattTargets {
    /// `(N+ + 1) / (N+ + 2)` for positives and `1 / (N- + 2)` for negatives.
    #[default]
    Smoothed,
    /// Raw 0/1 labels.
    Hard,
}

fn targets(labels: &[Label], kind: PlattTargets) -> Vec<f64> {
    let pos = labels.iter().filter(|l| l.is_correct()).count() as f64;
    let neg = labels.len() as f64 - pos;
    let (hi, lo) = match kind {
        PlattTargets::Smoothed => ((pos + 1.0) / (pos + 2.0), 1.0 / (neg + 2.0)),
        PlattTargets::Hard => (1.0, 0.0),
    };
    labels.iter().map(|l| if l.is_correct() { hi } else { lo }).collect()
}

// cross-entropy term for target t at z = A f + B, stable for either sign of z
fn loss_term(t: f64, z: f64) -> f64 {
    if z >= 0.0 {
        t * z + (-z).exp().ln_1p()
    } else {
        (t - 1.0) * z + z.exp().ln_1p()
    }
}

fn objective(scores: &[f64], t: &[f64], a: f64, b: f64) -> f64 {
    scores.iter().zip(t).map(|(&f, &ti)| loss_term(ti, a * f + b)).sum()
}

/// Negative log-likelihood of `sigmoid` against the chosen targets.
pub fn platt_nll(scores: &[f64], labels: &[Label], sigmoid: Sigmoid, kind: PlattTargets) -> f64 {
    objective(scores, &targets(labels, kind), sigmoid.a, sigmoid.b)
}

/// Fits `(A, B)`. Stops when the gradient norm drops below 1e-10, after 100
/// Newton iterations, or when the line search cannot make progress.
pub fn platt_fit(scores: &[f64], labels: &[Label], kind: PlattTargets) -> Result<Sigmoid> {
    if scores.len() != labels.len() {
        return Err(Error::Fit(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Fit("non-finite score".into()));
    }
    let pos = labels.iter().filter(|l| l.is_correct()).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Fit(format!(
            "both classes required, got {neg} incorrect and {pos} correct"
        )));
    }

    let t = targets(labels, kind);
    let mut a = 0.0;
    let mut b = ((neg as f64 + 1.0) / (pos as f64 + 1.0)).ln();
    let mut fval = objective(scores, &t, a, b);

    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21) = (HESSIAN_RIDGE, HESSIAN_RIDGE, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&f, &ti) in scores.iter().zip(&t) {
            let z = a * f + b;
            // p = P(correct) = 1 / (1 + e^z), q = 1 - p
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.hypot(g2) < GRAD_TOL {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        let mut accepted = false;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(scores, &t, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Fit("sigmoid parameters diverged".into()));
    }
    Ok(Sigmoid { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(v: &[u8]) -> Vec<Label> {
        v.iter().map(|&x| Label::try_from(x).unwrap()).collect()
    }

    #[test]
    fn separated_scores_give_increasing_map() {
        let scores = [0.0, 0.1, 0.2, 0.3, 0.7, 0.8, 0.9, 1.0];
        let y = labels(&[0, 0, 0, 0, 1, 1, 1, 1]);
        let s = platt_fit(&scores, &y, PlattTargets::Smoothed).unwrap();
        assert!(s.a < 0.0, "{s:?}");
        let out: Vec<f64> = (0..=10).map(|i| s.predict(i as f64 / 10.0)).collect();
        assert!(out.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn uninformative_scores_give_base_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..4000).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<Label> = (0..4000).map(|_| Label::from(rng.random_bool(0.3))).collect();
        let base = y.iter().filter(|l| l.is_correct()).count() as f64 / y.len() as f64;
        let s = platt_fit(&scores, &y, PlattTargets::Smoothed).unwrap();
        for f in [0.0, 0.25, 0.5, 0.75, 1.0] {
            assert!((s.predict(f) - base).abs() < 0.1);
        }
        // no worse than the constant base-rate predictor
        let constant = Sigmoid { a: 0.0, b: ((1.0 - base) / base).ln() };
        assert!(
            platt_nll(&scores, &y, s, PlattTargets::Hard)
                <= platt_nll(&scores, &y, constant, PlattTargets::Hard) + 1e-6 * y.len() as f64
        );
    }

    #[test]
    fn symmetric_about_zero_gives_zero_intercept() {
        let raw = [0.1, 0.4, 0.7, 1.3, 0.2, 0.9];
        let mut scores = Vec::new();
        let mut y = Vec::new();
        for (i, &s) in raw.iter().enumerate() {
            // mostly positives above zero, one flipped pair for overlap
            let flip = i == 0;
            scores.push(s);
            y.push(Label::from(!flip));
            scores.push(-s);
            y.push(Label::from(flip));
        }
        let fit = platt_fit(&scores, &y, PlattTargets::Smoothed).unwrap();
        assert!(fit.b.abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn symmetric_about_half_centers_there() {
        // scores s (correct) and 1 - s (incorrect): the sigmoid crosses 0.5 at f = 0.5
        let raw = [0.6, 0.7, 0.55, 0.9, 0.45, 0.8];
        let mut scores = Vec::new();
        let mut y = Vec::new();
        for &s in &raw {
            scores.extend([s, 1.0 - s]);
            y.extend([Label::Correct, Label::Incorrect]);
        }
        let fit = platt_fit(&scores, &y, PlattTargets::Smoothed).unwrap();
        assert!((fit.a * 0.5 + fit.b).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn single_class_is_fit_error() {
        assert!(matches!(
            platt_fit(&[0.1, 0.2], &labels(&[1, 1]), PlattTargets::Smoothed),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn hard_targets_on_separable_data_stay_finite() {
        let scores = [0.0, 0.1, 0.9, 1.0];
        let y = labels(&[0, 0, 1, 1]);
        let s = platt_fit(&scores, &y, PlattTargets::Hard).unwrap();
        assert!(s.predict(1.0) > 0.99 && s.predict(0.0) < 0.01);
    }

    #[test]
    fn fit_beats_constant_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.random_range(4..200);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut y: Vec<Label> = scores
                .iter()
                .map(|&s| Label::from(rng.random_bool(1.0 / (1.0 + (-s).exp()))))
                .collect();
            y[0] = Label::Correct;
            y[1] = Label::Incorrect;
            let fit = platt_fit(&scores, &y, PlattTargets::Smoothed).unwrap();
            let t = targets(&y, PlattTargets::Smoothed);
            let mean_t = t.iter().sum::<f64>() / n as f64;
            let constant = Sigmoid { a: 0.0, b: ((1.0 - mean_t) / mean_t).ln() };
            assert!(
                platt_nll(&scores, &y, fit, PlattTargets::Smoothed)
                    <= platt_nll(&scores, &y, constant, PlattTargets::Smoothed) + 1e-9
            );
        }
    }

    #[test]
    fn predict_is_stable_at_extremes() {
        let s = Sigmoid { a: -1.0, b: 0.0 };
        assert_eq!(s.predict(1e4), 1.0);
        assert_eq!(s.predict(-1e4), 0.0);
        assert_eq!(s.predict(0.0), 0.5);
    }
}
