use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

/// Positive-class scores in `[0,1]` with their ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.is_empty() {
            return Err(EvalError::Empty);
        }
        if scores.len() != labels.len() {
            return Err(EvalError::Length { scores: scores.len(), labels: labels.len() });
        }
        if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(EvalError::ScoreRange(s));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `(positives, negatives)`.
    pub fn counts(&self) -> (usize, usize) {
        let p = self.labels.iter().filter(|&&l| l).count();
        (p, self.labels.len() - p)
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        match self.counts() {
            (0, _) | (_, 0) => Err(EvalError::SingleClass),
            c => Ok(c),
        }
    }

    /// Distinct scores, descending.
    fn distinct_desc(&self) -> Vec<f64> {
        let mut s = self.scores.clone();
        s.sort_by(|a, b| b.total_cmp(a));
        s.dedup();
        s
    }

    pub fn confusion(&self, threshold: f64) -> Confusion {
        let mut c = Confusion::default();
        for (&s, &l) in self.scores.iter().zip(&self.labels) {
            match (s >= threshold, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Operating points for "positive iff score ≥ threshold", thresholds
/// descending: `+∞` first, then every distinct score. The curve starts at
/// `(0,0)` and the lowest score reaches `(1,1)`.
pub fn roc_curve(set: &ScoredSet) -> Result<Vec<RocPoint>> {
    let (n_p, n_n) = set.require_both_classes()?;
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));
    let mut curve = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = set.scores[order[i]];
        while i < order.len() && set.scores[order[i]] == t {
            if set.labels[order[i]] {
                tp += 1
            } else {
                fp += 1
            }
            i += 1;
        }
        curve.push(RocPoint { threshold: t, fpr: fp as f64 / n_n as f64, tpr: tp as f64 / n_p as f64 });
    }
    Ok(curve)
}

/// Trapezoidal area under a curve ordered by nondecreasing FPR.
pub fn auc(curve: &[RocPoint]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(EvalError::Curve("fewer than two points".into()));
    }
    let mut area = 0.0;
    for w in curve.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b.fpr < a.fpr || b.tpr < a.tpr {
            return Err(EvalError::Curve("coordinates must be nondecreasing".into()));
        }
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
    }
    Ok(area)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Harmonic mean of precision and recall as the exact fraction
/// `2tp / (2tp + fp + fn)`; `0/1` when there are no true positives.
fn f1_ratio(tp: usize, fp: usize, fn_: usize) -> (u128, u128) {
    if tp == 0 {
        (0, 1)
    } else {
        (2 * tp as u128, (2 * tp + fp + fn_) as u128)
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let (n, d) = f1_ratio(tp, fp, fn_);
    n as f64 / d as f64
}

impl Confusion {
    pub fn f1_positive(&self) -> f64 {
        f1(self.tp, self.fp, self.fn_)
    }

    /// F1 with the negative class treated as the target.
    pub fn f1_negative(&self) -> f64 {
        f1(self.tn, self.fn_, self.fp)
    }

    pub fn f1_macro(&self) -> f64 {
        (self.f1_positive() + self.f1_negative()) / 2.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Objective {
    /// Mean of positive-class and negative-class F1.
    #[default]
    Macro,
    Positive,
}

impl FromStr for F1Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "macro" => Ok(F1Objective::Macro),
            "positive" => Ok(F1Objective::Positive),
            other => Err(format!("unknown F1 objective {other:?} (expected macro or positive)")),
        }
    }
}

impl fmt::Display for F1Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            F1Objective::Macro => "macro",
            F1Objective::Positive => "positive",
        })
    }
}

impl F1Objective {
    pub fn score(self, c: &Confusion) -> f64 {
        match self {
            F1Objective::Macro => c.f1_macro(),
            F1Objective::Positive => c.f1_positive(),
        }
    }

    /// The objective as an exact fraction, for tie-exact comparisons.
    fn ratio(self, c: &Confusion) -> (u128, u128) {
        let (a, b) = f1_ratio(c.tp, c.fp, c.fn_);
        match self {
            F1Objective::Macro => {
                let (x, y) = f1_ratio(c.tn, c.fn_, c.fp);
                (a * y + x * b, 2 * b * y)
            }
            F1Objective::Positive => (a, b),
        }
    }
}

/// Candidate thresholds, ascending: `0` (all positive), midpoints between
/// consecutive distinct scores, and a value above the maximum (all negative).
pub fn threshold_candidates(set: &ScoredSet) -> Vec<f64> {
    let mut distinct = set.distinct_desc();
    distinct.reverse();
    let mut out = vec![0.0];
    out.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    let max = *distinct.last().expect("nonempty set");
    out.push(if max < 1.0 { (max + 1.0) / 2.0 } else { 1.0f64.next_up() });
    out
}

/// The candidate maximizing `objective`; the smallest threshold wins ties.
/// Scores are compared as exact fractions, so equal F1 values always tie.
pub fn select_threshold(set: &ScoredSet, objective: F1Objective) -> Result<(f64, f64)> {
    set.require_both_classes()?;
    let mut best: Option<(f64, Confusion, (u128, u128))> = None;
    for t in threshold_candidates(set) {
        let c = set.confusion(t);
        let (n, d) = objective.ratio(&c);
        if best.as_ref().is_none_or(|&(_, _, (bn, bd))| n * bd > bn * d) {
            best = Some((t, c, (n, d)));
        }
    }
    let (t, c, _) = best.expect("at least two candidates");
    Ok((t, objective.score(&c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(pos: &[f64], neg: &[f64]) -> ScoredSet {
        let scores = pos.iter().chain(neg).copied().collect();
        let labels = pos.iter().map(|_| true).chain(neg.iter().map(|_| false)).collect();
        ScoredSet::new(scores, labels).unwrap()
    }

    /// P(pos > neg) + ½·P(pos = neg) over all pairs.
    fn pairwise_auc(s: &ScoredSet) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (&a, _) in s.scores().iter().zip(s.labels()).filter(|(_, &l)| l) {
            for (&b, _) in s.scores().iter().zip(s.labels()).filter(|(_, &l)| !l) {
                den += 1.0;
                num += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        num / den
    }

    #[test]
    fn perfect_separation() {
        let s = set(&[0.9, 0.8], &[0.1, 0.2]);
        let c = roc_curve(&s).unwrap();
        assert!(c.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(auc(&c).unwrap(), 1.0);
        let (t, f) = select_threshold(&s, F1Objective::Macro).unwrap();
        assert_eq!((t, f), ((0.2 + 0.8) / 2.0, 1.0));
    }

    #[test]
    fn four_point_example_matches_enumeration() {
        let s = set(&[0.35, 0.8], &[0.1, 0.4]);
        let c = roc_curve(&s).unwrap();
        // threshold positions: above all, ≥0.8, ≥0.4, ≥0.35, ≥0.1
        let expected = [(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)];
        assert_eq!(c.iter().map(|p| (p.fpr, p.tpr)).collect::<Vec<_>>(), expected);
        assert_eq!(auc(&c).unwrap(), 0.75);
    }

    #[test]
    fn all_equal_scores() {
        let s = set(&[0.5, 0.5], &[0.5]);
        let c = roc_curve(&s).unwrap();
        assert_eq!(c.iter().map(|p| (p.fpr, p.tpr)).collect::<Vec<_>>(), [(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc(&c).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        let s = set(&[0.2, 0.3], &[]);
        assert!(matches!(roc_curve(&s), Err(EvalError::SingleClass)));
        assert!(matches!(select_threshold(&s, F1Objective::Macro), Err(EvalError::SingleClass)));
    }

    #[test]
    fn five_candidate_sweep() {
        // candidates 0, 0.4, 0.65, 0.8, 0.95
        let s = set(&[0.9, 0.6], &[0.7, 0.2]);
        assert_eq!(
            threshold_candidates(&s),
            [0.0, (0.2 + 0.6) / 2.0, (0.6 + 0.7) / 2.0, (0.7 + 0.9) / 2.0, (0.9 + 1.0) / 2.0]
        );
        // at 0.4: tp 2, fp 1, tn 1, fn 0 → F1+ = 0.8, F1− = 2/3
        // at 0.8: tp 1, fp 0, tn 2, fn 1 → F1+ = 2/3, F1− = 0.8
        let (t, f) = select_threshold(&s, F1Objective::Macro).unwrap();
        assert_eq!(t, 0.4);
        assert!((f - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(select_threshold(&s, F1Objective::Positive).unwrap().0, 0.4);
    }

    #[test]
    fn threshold_zero_predicts_everything_positive() {
        let s = set(&[0.3, 0.0], &[0.9, 0.0]);
        let c = s.confusion(0.0);
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 2, 0, 0));
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(matches!(ScoredSet::new(vec![], vec![]), Err(EvalError::Empty)));
        assert!(matches!(ScoredSet::new(vec![1.5], vec![true]), Err(EvalError::ScoreRange(_))));
        assert!(ScoredSet::new(vec![0.5], vec![true, false]).is_err());
    }

    fn arb_set() -> impl Strategy<Value = ScoredSet> {
        (2usize..200)
            .prop_flat_map(|n| (proptest::collection::vec(0u32..20, n), proptest::collection::vec(any::<bool>(), n)))
            .prop_filter("both classes", |(_, l)| l.contains(&true) && l.contains(&false))
            .prop_map(|(s, l)| ScoredSet::new(s.iter().map(|&v| v as f64 / 19.0).collect(), l).unwrap())
    }

    proptest! {
        #[test]
        fn trapezoid_equals_pairwise(s in arb_set()) {
            let c = roc_curve(&s).unwrap();
            prop_assert!((auc(&c).unwrap() - pairwise_auc(&s)).abs() < 1e-9);
            prop_assert_eq!((c[0].fpr, c[0].tpr), (0.0, 0.0));
            prop_assert_eq!((c.last().unwrap().fpr, c.last().unwrap().tpr), (1.0, 1.0));
            for w in c.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
        }

        #[test]
        fn auc_rank_invariant_and_label_swap(s in arb_set()) {
            let a = auc(&roc_curve(&s).unwrap()).unwrap();
            let squashed = ScoredSet::new(s.scores().iter().map(|v| v * v * 0.5 + 0.1).collect(), s.labels().to_vec()).unwrap();
            prop_assert_eq!(auc(&roc_curve(&squashed).unwrap()).unwrap(), a);
            let swapped = ScoredSet::new(s.scores().iter().map(|v| 1.0 - v).collect(), s.labels().iter().map(|l| !l).collect()).unwrap();
            prop_assert!((auc(&roc_curve(&swapped).unwrap()).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn monotone_transform_keeps_classification(s in arb_set()) {
            let f = |v: f64| (v * 3.0).exp() / 3.0f64.exp();
            let moved = ScoredSet::new(s.scores().iter().map(|&v| f(v)).collect(), s.labels().to_vec()).unwrap();
            let (t1, f1) = select_threshold(&s, F1Objective::Macro).unwrap();
            let (t2, f2) = select_threshold(&moved, F1Objective::Macro).unwrap();
            prop_assert_eq!(f1, f2);
            for (&a, &b) in s.scores().iter().zip(moved.scores()) {
                prop_assert_eq!(a >= t1, b >= t2);
            }
        }
    }
}
