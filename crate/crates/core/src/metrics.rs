//! Selective-prediction and reliability metrics.
//!
//! Two framings are used on purpose. ROC and accuracy–rejection analyses ask
//! whether confidence separates correct grading decisions from wrong ones, so
//! they score `decision_confidence` against `decision_correct`. Reliability
//! analyses ask whether P(correct response) matches observed frequencies, so
//! Brier, ECE and MCE score `confidence_correct` against the gold label.

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::io::stable_sum;

/// Rejection fractions reported in [`MethodReport::accuracy_at_rejection`].
pub const REJECTION_GRID: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

pub const DEFAULT_BINS: usize = 10;

/// Objectives closer than this are treated as tied by [`operating_point`].
pub const OPERATING_POINT_TIE_TOLERANCE: f64 = 1e-12;

/// One scored response.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    /// Oriented probability that the response is correct.
    pub confidence_correct: f64,
    pub gold_label: Label,
    /// Grading decision when it is fixed externally (the grader's own label
    /// for single-signal baselines). Otherwise the decision thresholds
    /// `confidence_correct` at 0.5.
    pub decision_override: Option<Label>,
}

impl EvalItem {
    pub fn new(confidence_correct: f64, gold_label: Label) -> Self {
        Self {
            confidence_correct,
            gold_label,
            decision_override: None,
        }
    }

    pub fn with_decision(confidence_correct: f64, gold_label: Label, decision: Label) -> Self {
        Self {
            confidence_correct,
            gold_label,
            decision_override: Some(decision),
        }
    }

    pub fn decision(&self) -> Label {
        self.decision_override
            .unwrap_or(Label::from(self.confidence_correct >= 0.5))
    }

    pub fn decision_correct(&self) -> bool {
        self.decision() == self.gold_label
    }

    /// Confidence assigned to the decision taken; `max(p, 1 - p)` for
    /// thresholded decisions.
    pub fn decision_confidence(&self) -> f64 {
        match self.decision() {
            Label::Correct => self.confidence_correct,
            Label::Incorrect => 1.0 - self.confidence_correct,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
}

/// Area under a piecewise-linear curve.
pub fn trapezoid(points: &[CurvePoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].x - w[0].x) * (w[0].y + w[1].y) / 2.0)
        .sum()
}

fn validate(items: &[EvalItem]) -> Result<()> {
    if let Some(bad) = items
        .iter()
        .find(|i| !(0.0..=1.0).contains(&i.confidence_correct))
    {
        return Err(Error::InvalidArgument(format!(
            "confidence {} outside [0, 1]",
            bad.confidence_correct
        )));
    }
    Ok(())
}

/// ROC curve `(FPR, TPR)` and its trapezoidal area for `scores` against
/// binary `positives`. Tied scores form one diagonal segment, which counts
/// tied pairs as one half.
pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<(Vec<CurvePoint>, f64)> {
    let p = positives.iter().filter(|&&b| b).count();
    let n = positives.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::MetricUndefined(format!(
            "ROC needs both outcomes, got {p} positive and {n} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![CurvePoint { x: 0.0, y: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(CurvePoint {
            x: fp as f64 / n as f64,
            y: tp as f64 / p as f64,
        });
    }
    let area = trapezoid(&points);
    Ok((points, area))
}

/// ROC of decision confidence against decision correctness.
pub fn roc_auroc(items: &[EvalItem]) -> Result<(Vec<CurvePoint>, f64)> {
    validate(items)?;
    let scores: Vec<f64> = items.iter().map(EvalItem::decision_confidence).collect();
    let correct: Vec<bool> = items.iter().map(EvalItem::decision_correct).collect();
    roc_curve(&scores, &correct)
}

/// Accuracy–rejection curve: rejecting the `r` least confident decisions
/// (stable input order among ties) for `r = 0..n-1`, with x = `r / n`.
pub fn arc_auarc(items: &[EvalItem]) -> Result<(Vec<CurvePoint>, f64)> {
    validate(items)?;
    let n = items.len();
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        items[a]
            .decision_confidence()
            .total_cmp(&items[b].decision_confidence())
    });
    let mut correct_retained = items.iter().filter(|i| i.decision_correct()).count();
    let mut points = Vec::with_capacity(n);
    for r in 0..n {
        points.push(CurvePoint {
            x: r as f64 / n as f64,
            y: correct_retained as f64 / (n - r) as f64,
        });
        if items[order[r]].decision_correct() {
            correct_retained -= 1;
        }
    }
    let area = trapezoid(&points);
    Ok((points, area))
}

/// Retained accuracy after rejecting `floor(fraction * n)` decisions.
pub fn accuracy_at_rejection(arc: &[CurvePoint], fraction: f64) -> Option<f64> {
    let n = arc.len();
    let r = (fraction * n as f64 + 1e-9).floor() as usize;
    arc.get(r).map(|p| p.y)
}

/// Point maximizing `retained_accuracy - rejection_fraction`; near-ties
/// (within [`OPERATING_POINT_TIE_TOLERANCE`]) go to the smallest rejection.
pub fn operating_point(arc: &[CurvePoint]) -> Option<CurvePoint> {
    let mut best: Option<CurvePoint> = None;
    for p in arc {
        let better = best.is_none_or(|b| p.y - p.x > b.y - b.x + OPERATING_POINT_TIE_TOLERANCE);
        if better {
            best = Some(*p);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_confidence: Option<f64>,
    pub empirical_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub bins: Vec<ReliabilityBin>,
    pub brier: f64,
    pub ece: f64,
    pub mce: f64,
}

/// Equal-width reliability bins over `[0, 1]`, the last one closed on the right.
pub fn reliability(items: &[EvalItem], n_bins: usize) -> Result<ReliabilityReport> {
    validate(items)?;
    if n_bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    if items.is_empty() {
        return Err(Error::MetricUndefined("reliability of an empty set".into()));
    }
    let n = items.len() as f64;
    let mut members: Vec<Vec<&EvalItem>> = vec![Vec::new(); n_bins];
    for item in items {
        let b = ((item.confidence_correct * n_bins as f64) as usize).min(n_bins - 1);
        members[b].push(item);
    }

    let mut bins = Vec::with_capacity(n_bins);
    let mut mce = 0.0f64;
    let mut gaps = Vec::new();
    for (b, m) in members.iter().enumerate() {
        let lower = b as f64 / n_bins as f64;
        let upper = (b + 1) as f64 / n_bins as f64;
        if m.is_empty() {
            bins.push(ReliabilityBin {
                lower,
                upper,
                count: 0,
                mean_confidence: None,
                empirical_accuracy: None,
            });
            continue;
        }
        let count = m.len() as f64;
        let conf = stable_sum(m.iter().map(|i| i.confidence_correct)) / count;
        let acc = m.iter().filter(|i| i.gold_label.is_correct()).count() as f64 / count;
        let gap = (acc - conf).abs();
        gaps.push(count / n * gap);
        mce = mce.max(gap);
        bins.push(ReliabilityBin {
            lower,
            upper,
            count: m.len(),
            mean_confidence: Some(conf),
            empirical_accuracy: Some(acc),
        });
    }
    let ece = stable_sum(gaps);
    let brier = stable_sum(
        items
            .iter()
            .map(|i| (i.confidence_correct - i.gold_label.as_f64()).powi(2)),
    ) / n;
    Ok(ReliabilityReport {
        bins,
        brier,
        // a weighted mean of the gaps cannot exceed their maximum
        ece: ece.min(mce),
        mce,
    })
}

/// Everything reported for one confidence method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub n: usize,
    /// Accuracy of the grading decisions with nothing rejected.
    pub accuracy: f64,
    /// ROC area for decision confidence vs decision correctness.
    pub auroc: f64,
    /// ROC area for P(correct) vs the gold label.
    pub auroc_gold: f64,
    pub auarc: f64,
    pub brier: f64,
    pub ece: f64,
    pub mce: f64,
    pub accuracy_at_rejection: Vec<(f64, f64)>,
    pub operating_point: CurvePoint,
    pub roc: Vec<CurvePoint>,
    pub roc_gold: Vec<CurvePoint>,
    pub arc: Vec<CurvePoint>,
    pub reliability: ReliabilityReport,
}

/// Computes every metric for one method's items.
pub fn evaluate_method(items: &[EvalItem], n_bins: usize) -> Result<MethodReport> {
    validate(items)?;
    if items.is_empty() {
        return Err(Error::MetricUndefined("no items to evaluate".into()));
    }
    let (roc, auroc) = roc_auroc(items)?;
    let scores: Vec<f64> = items.iter().map(|i| i.confidence_correct).collect();
    let gold: Vec<bool> = items.iter().map(|i| i.gold_label.is_correct()).collect();
    let (roc_gold, auroc_gold) = roc_curve(&scores, &gold)?;
    let (arc, auarc) = arc_auarc(items)?;
    let rel = reliability(items, n_bins)?;
    let accuracy_at_rejection = REJECTION_GRID
        .iter()
        .filter_map(|&r| accuracy_at_rejection(&arc, r).map(|a| (r, a)))
        .collect();
    let operating_point = operating_point(&arc).expect("arc is nonempty");
    Ok(MethodReport {
        n: items.len(),
        accuracy: arc[0].y,
        auroc,
        auroc_gold,
        auarc,
        brier: rel.brier,
        ece: rel.ece,
        mce: rel.mce,
        accuracy_at_rejection,
        operating_point,
        roc,
        roc_gold,
        arc,
        reliability: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Items whose decision is always `Correct`, so `decision_confidence`
    /// equals the given confidence and correctness equals the gold label.
    fn items(conf: &[f64], correct: &[u8]) -> Vec<EvalItem> {
        conf.iter()
            .zip(correct)
            .map(|(&c, &y)| EvalItem::with_decision(c, Label::try_from(y).unwrap(), Label::Correct))
            .collect()
    }

    fn pairwise_auc(scores: &[f64], pos: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn derived_decision_fields() {
        let i = EvalItem::new(0.3, Label::Incorrect);
        assert_eq!(i.decision(), Label::Incorrect);
        assert!(i.decision_correct());
        assert!((i.decision_confidence() - 0.7).abs() < 1e-15);
        let j = EvalItem::new(0.5, Label::Incorrect);
        assert_eq!(j.decision(), Label::Correct);
        assert_eq!(j.decision_confidence(), 0.5);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(roc_auroc(&items(&[0.9, 0.8, 0.6], &[1, 1, 0])).unwrap().1, 1.0);
        assert_eq!(roc_auroc(&items(&[0.6, 0.9], &[1, 0])).unwrap().1, 0.0);
        assert!(matches!(
            roc_auroc(&items(&[0.6, 0.9], &[1, 1])),
            Err(Error::MetricUndefined(_))
        ));
    }

    #[test]
    fn auroc_matches_pairwise_on_random_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        // coarse grid so ties occur
        let conf: Vec<f64> = (0..200).map(|_| 0.5 + (rng.random_range(0..20) as f64) / 40.0).collect();
        let corr: Vec<u8> = (0..200).map(|_| rng.random_range(0..2)).collect();
        let it = items(&conf, &corr);
        let pos: Vec<bool> = corr.iter().map(|&c| c == 1).collect();
        let got = roc_auroc(&it).unwrap().1;
        assert!((got - pairwise_auc(&conf, &pos)).abs() < 1e-9);
    }

    #[test]
    fn arc_examples() {
        let (arc, _) = arc_auarc(&items(&[0.9, 0.8, 0.6], &[1, 1, 0])).unwrap();
        assert!((arc[0].y - 2.0 / 3.0).abs() < 1e-15);
        assert!((arc[1].x - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(arc[1].y, 1.0);
        assert_eq!(arc.len(), 3);
    }

    #[test]
    fn arc_perfect_ranking_reaches_one_at_error_rate() {
        // 10 errors of 50 at the lowest confidences
        let conf: Vec<f64> = (0..50).map(|i| 0.5 + i as f64 / 100.0).collect();
        let corr: Vec<u8> = (0..50).map(|i| u8::from(i >= 10)).collect();
        let (arc, _) = arc_auarc(&items(&conf, &corr)).unwrap();
        for p in &arc {
            if p.x >= 0.2 {
                assert_eq!(p.y, 1.0);
            } else {
                assert!(p.y < 1.0);
            }
        }
        assert_eq!(arc[10].x, 0.2);
    }

    #[test]
    fn arc_ties_reject_in_input_order() {
        let (arc, _) = arc_auarc(&items(&[0.7, 0.7, 0.9], &[0, 1, 1])).unwrap();
        assert_eq!(arc[1].y, 1.0);
        let (arc, _) = arc_auarc(&items(&[0.7, 0.7, 0.9], &[1, 0, 1])).unwrap();
        assert_eq!(arc[1].y, 0.5);
    }

    #[test]
    fn single_item_arc() {
        let (arc, area) = arc_auarc(&items(&[0.7], &[1])).unwrap();
        assert_eq!(arc.len(), 1);
        assert_eq!(area, 0.0);
        assert_eq!(operating_point(&arc).unwrap().x, 0.0);
    }

    #[test]
    fn operating_point_examples() {
        // error rate 0.2, perfectly ranked: r = 0 and r = 0.2 tie at 0.8
        let conf: Vec<f64> = (0..100).map(|i| 0.5 + i as f64 / 250.0).collect();
        let corr: Vec<u8> = (0..100).map(|i| u8::from(i >= 20)).collect();
        let (arc, _) = arc_auarc(&items(&conf, &corr)).unwrap();
        // enumerate the objective: the maximum is 0.8, reached only at r = 0 and r = 0.2
        let objective: Vec<f64> = arc.iter().map(|p| p.y - p.x).collect();
        let max = objective.iter().cloned().fold(f64::MIN, f64::max);
        assert!((max - 0.8).abs() < 1e-12);
        let argmaxes: Vec<usize> = (0..100).filter(|&r| (objective[r] - max).abs() < 1e-12).collect();
        assert_eq!(argmaxes, vec![0, 20]);
        let op = operating_point(&arc).unwrap();
        assert_eq!(op.x, 0.0);
        assert_eq!(op.y, 0.8);

        let flat = items(&[0.8; 10], &[1, 0, 1, 1, 0, 1, 1, 1, 0, 1]);
        let (arc, _) = arc_auarc(&flat).unwrap();
        assert_eq!(operating_point(&arc).unwrap().x, 0.0);
    }

    #[test]
    fn reliability_examples() {
        let calibrated: Vec<EvalItem> = (0..1000)
            .map(|i| EvalItem::new(0.7, Label::from(i < 700)))
            .collect();
        assert_eq!(reliability(&calibrated, 10).unwrap().ece, 0.0);

        let over: Vec<EvalItem> = (0..100).map(|i| EvalItem::new(1.0, Label::from(i % 2 == 0))).collect();
        let r = reliability(&over, 10).unwrap();
        assert_eq!((r.brier, r.ece, r.mce), (0.5, 0.5, 0.5));
        assert_eq!(r.bins[9].count, 100);

        let half: Vec<EvalItem> = (0..37).map(|i| EvalItem::new(0.5, Label::from(i % 3 == 0))).collect();
        assert_eq!(reliability(&half, 10).unwrap().brier, 0.25);
    }

    #[test]
    fn reliability_bins_cover_items() {
        let it: Vec<EvalItem> = [0.0, 0.1, 0.15, 0.99, 1.0]
            .iter()
            .map(|&p| EvalItem::new(p, Label::Correct))
            .collect();
        let r = reliability(&it, 10).unwrap();
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 5);
        assert_eq!(r.bins[0].count, 1);
        assert_eq!(r.bins[1].count, 2);
        assert_eq!(r.bins[9].count, 2);
        assert!(r.bins[5].mean_confidence.is_none());
    }

    #[test]
    fn report_fields_match_components() {
        let conf = [0.9, 0.2, 0.65, 0.4, 0.8, 0.55, 0.1, 0.7];
        let gold = [1u8, 0, 1, 1, 0, 1, 0, 1];
        let it: Vec<EvalItem> = conf
            .iter()
            .zip(gold)
            .map(|(&c, g)| EvalItem::new(c, Label::try_from(g).unwrap()))
            .collect();
        let rep = evaluate_method(&it, 10).unwrap();
        assert_eq!(rep.auroc, roc_auroc(&it).unwrap().1);
        assert_eq!(rep.auarc, arc_auarc(&it).unwrap().1);
        let rel = reliability(&it, 10).unwrap();
        assert_eq!((rep.brier, rep.ece, rep.mce), (rel.brier, rel.ece, rel.mce));
        assert_eq!(rep.accuracy, 6.0 / 8.0);
        assert_eq!(rep.accuracy_at_rejection.len(), 10);
        assert_eq!(rep.accuracy_at_rejection[0], (0.0, rep.accuracy));
        assert!(rep.accuracy_at_rejection.iter().any(|&(r, _)| r == 0.4));
    }

    fn arb_items() -> impl Strategy<Value = Vec<(f64, bool)>> {
        prop::collection::vec((0.0f64..=1.0, any::<bool>()), 2..500)
    }

    proptest! {
        #[test]
        fn auroc_equals_pairwise(v in arb_items()) {
            let conf: Vec<f64> = v.iter().map(|(c, _)| *c).collect();
            let pos: Vec<bool> = v.iter().map(|(_, b)| *b).collect();
            prop_assume!(pos.iter().any(|&b| b) && pos.iter().any(|&b| !b));
            let (_, area) = roc_curve(&conf, &pos).unwrap();
            prop_assert!((area - pairwise_auc(&conf, &pos)).abs() < 1e-9);
        }

        #[test]
        fn auroc_invariant_under_increasing_map(v in arb_items()) {
            let conf: Vec<f64> = v.iter().map(|(c, _)| *c).collect();
            let pos: Vec<bool> = v.iter().map(|(_, b)| *b).collect();
            prop_assume!(pos.iter().any(|&b| b) && pos.iter().any(|&b| !b));
            let mapped: Vec<f64> = conf.iter().map(|c| c.powi(3) * 0.5 + 0.1).collect();
            let (_, a) = roc_curve(&conf, &pos).unwrap();
            let (_, b) = roc_curve(&mapped, &pos).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn ece_at_most_mce_and_brier_bounded(v in arb_items(), bins in 1usize..30) {
            let it: Vec<EvalItem> = v.iter().map(|&(c, y)| EvalItem::new(c, Label::from(y))).collect();
            let r = reliability(&it, bins).unwrap();
            prop_assert!(r.ece <= r.mce);
            prop_assert!((0.0..=1.0).contains(&r.brier));
            prop_assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), it.len());
        }

        #[test]
        fn arc_starts_at_accuracy(v in arb_items()) {
            let it: Vec<EvalItem> = v.iter().map(|&(c, y)| EvalItem::new(c, Label::from(y))).collect();
            let (arc, _) = arc_auarc(&it).unwrap();
            let acc = it.iter().filter(|i| i.decision_correct()).count() as f64 / it.len() as f64;
            prop_assert_eq!(arc[0].y, acc);
        }

        #[test]
        fn curves_permutation_invariant_without_ties(seed in any::<u64>(), n in 2usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let it: Vec<EvalItem> = (0..n)
                .map(|_| EvalItem::new(rng.random_range(0.0..1.0), Label::from(rng.random_bool(0.5))))
                .collect();
            let mut shuffled = it.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng);
            prop_assert_eq!(arc_auarc(&it).unwrap(), arc_auarc(&shuffled).unwrap());
            prop_assert_eq!(reliability(&it, 10).unwrap().bins, reliability(&shuffled, 10).unwrap().bins);
            match (roc_auroc(&it), roc_auroc(&shuffled)) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
