//! Multi-class evaluation metrics over a confusion tally.
//!
//! Seven metrics are reported: accuracy, support-weighted F1, precision,
//! recall (sensitivity) and specificity, the multi-class Matthews correlation
//! coefficient and Cohen's kappa.
//!
//! Abstentions stay in the tally as a separate column: each abstained item
//! counts toward its gold class's support and toward the total, but is never
//! a prediction of any class. Zero-division conventions: an undefined
//! per-class precision, recall, F1 or specificity is 0; MCC is 0 when either
//! variance factor vanishes; kappa is 1 for perfect agreement with chance
//! agreement 1, otherwise 0 in that degenerate case.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("metrics need at least one item")]
    EmptyTally,
    #[error("malformed tally: {0}")]
    Malformed(String),
}

/// `counts[i][j]` items of gold class `i` were predicted as class `j`;
/// `abstained[i]` items of gold class `i` yielded no prediction.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionTally {
    classes: Vec<String>,
    counts: Vec<Vec<u64>>,
    abstained: Vec<u64>,
}

impl ConfusionTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>, abstained: Vec<u64>) -> Result<Self, MetricsError> {
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|row| row.len() != k) {
            return Err(MetricsError::Malformed(format!("counts must be {k}x{k}")));
        }
        if abstained.len() != k {
            return Err(MetricsError::Malformed(format!("abstained must have {k} entries")));
        }
        let mut sorted = classes.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != k {
            return Err(MetricsError::Malformed("duplicate class labels".into()));
        }
        Ok(ConfusionTally { classes, counts, abstained })
    }

    /// Square tally with numbered classes and no abstentions.
    pub fn from_matrix(counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let k = counts.len();
        let classes = (0..k).map(|i| format!("c{i}")).collect();
        Self::from_counts(classes, counts, vec![0; k])
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn abstained(&self) -> &[u64] {
        &self.abstained
    }

    fn class_index(&mut self, label: &str) -> usize {
        if let Some(i) = self.classes.iter().position(|c| c == label) {
            return i;
        }
        // keep classes sorted so tallies built in any order compare equal
        let at = self.classes.partition_point(|c| c.as_str() < label);
        self.classes.insert(at, label.to_string());
        for row in &mut self.counts {
            row.insert(at, 0);
        }
        self.counts.insert(at, vec![0; self.classes.len()]);
        self.abstained.insert(at, 0);
        at
    }

    /// Records one item. `None` is an abstention.
    pub fn add(&mut self, gold: &str, predicted: Option<&str>) {
        self.add_n(gold, predicted, 1);
    }

    fn add_n(&mut self, gold: &str, predicted: Option<&str>, n: u64) {
        // register both labels before taking indices; an insertion shifts them
        self.class_index(gold);
        match predicted {
            Some(p) => {
                self.class_index(p);
                let (g, p) = (self.class_index(gold), self.class_index(p));
                self.counts[g][p] += n;
            }
            None => {
                let g = self.class_index(gold);
                self.abstained[g] += n;
            }
        }
    }

    /// Component-wise sum over the union of both class sets.
    pub fn merge(&self, other: &ConfusionTally) -> ConfusionTally {
        let mut out = self.clone();
        for (i, gold) in other.classes.iter().enumerate() {
            for (j, pred) in other.classes.iter().enumerate() {
                let n = other.counts[i][j];
                if n > 0 {
                    out.add_n(gold, Some(pred), n);
                }
            }
            if other.abstained[i] > 0 {
                out.add_n(gold, None, other.abstained[i]);
            }
        }
        out
    }

    pub fn abstain_count(&self) -> u64 {
        self.abstained.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.abstain_count()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Gold support of class `i`, abstentions included.
    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum::<u64>() + self.abstained[i]
    }

    /// Number of items predicted as class `j`.
    pub fn predicted(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }

    fn nonempty_total(&self) -> Result<u64, MetricsError> {
        match self.total() {
            0 => Err(MetricsError::EmptyTally),
            n => Ok(n),
        }
    }
}

/// One-vs-rest counts of a single class.
#[derive(Debug, Clone, Copy)]
struct OneVsRest {
    tp: u64,
    fp: u64,
    fn_: u64,
    tn: u64,
    support: u64,
}

fn one_vs_rest(t: &ConfusionTally, k: usize, total: u64) -> OneVsRest {
    let tp = t.counts[k][k];
    let support = t.support(k);
    let fp = t.predicted(k) - tp;
    let fn_ = support - tp;
    OneVsRest { tp, fp, fn_, tn: total - tp - fp - fn_, support }
}

fn ratio<F: Scalar>(num: u64, den: u64) -> F {
    if den == 0 {
        F::zero()
    } else {
        F::from_count(num) / F::from_count(den)
    }
}

/// Support-weighted mean of a per-class statistic.
fn weighted<F: Scalar>(t: &ConfusionTally, stat: impl Fn(&OneVsRest) -> F) -> Result<F, MetricsError> {
    let total = t.nonempty_total()?;
    let sum = (0..t.classes.len()).fold(F::zero(), |acc, k| {
        let c = one_vs_rest(t, k, total);
        acc + F::from_count(c.support) * stat(&c)
    });
    Ok(sum / F::from_count(total))
}

pub fn accuracy<F: Scalar>(t: &ConfusionTally) -> Result<F, MetricsError> {
    let total = t.nonempty_total()?;
    Ok(ratio(t.correct(), total))
}

pub fn weighted_precision<F: Scalar>(t: &ConfusionTally) -> Result<F, MetricsError> {
    weighted(t, |c| ratio(c.tp, c.tp + c.fp))
}

/// Weighted recall, reported as sensitivity. Equal to accuracy by construction.
pub fn weighted_recall<F: Scalar>(t: &ConfusionTally) -> Result<F, MetricsError> {
    weighted(t, |c| ratio(c.tp, c.tp + c.fn_))
}

pub fn weighted_f1<F: Scalar>(t: &ConfusionTally) -> Result<F, MetricsError> {
    weighted(t, |c| ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_))
}

/// Support-weighted one-vs-rest specificity `TN / (TN + FP)`.
pub fn weighted_specificity<F: Scalar>(t: &ConfusionTally) -> Result<F, MetricsError> {
    weighted(t, |c| ratio(c.tn, c.tn + c.fp))
}

/// Sums needed by MCC and kappa, in exact integer arithmetic.
struct Agreement {
    correct: i128,
    total: i128,
    // sum over classes of predicted_k * support_k
    cross: i128,
    sum_pred_sq: i128,
    sum_gold_sq: i128,
}

fn agreement(t: &ConfusionTally) -> Result<Agreement, MetricsError> {
    let total = t.nonempty_total()? as i128;
    let k = t.classes.len();
    let mut cross = 0i128;
    let mut sum_pred_sq = 0i128;
    let mut sum_gold_sq = 0i128;
    for i in 0..k {
        let p = t.predicted(i) as i128;
        let g = t.support(i) as i128;
        cross += p * g;
        sum_pred_sq += p * p;
        sum_gold_sq += g * g;
    }
    // abstentions behave as one extra predicted-only column
    let a = t.abstain_count() as i128;
    sum_pred_sq += a * a;
    Ok(Agreement { correct: t.correct() as i128, total, cross, sum_pred_sq, sum_gold_sq })
}

fn from_i128<F: Scalar>(v: i128) -> F {
    F::from_i128(v).expect("i128 converts to float")
}

/// Multi-class Matthews correlation (Gorodkin's R_K).
pub fn mcc<F: Scalar>(t: &ConfusionTally) -> Result<F, MetricsError> {
    let a = agreement(t)?;
    let s2 = a.total * a.total;
    let cov = a.correct * a.total - a.cross;
    let var_pred = s2 - a.sum_pred_sq;
    let var_gold = s2 - a.sum_gold_sq;
    if var_pred == 0 || var_gold == 0 {
        return Ok(F::zero());
    }
    let den = from_i128::<F>(var_pred * var_gold).sqrt();
    Ok(from_i128::<F>(cov) / den)
}

pub fn cohens_kappa<F: Scalar>(t: &ConfusionTally) -> Result<F, MetricsError> {
    let a = agreement(t)?;
    // (p_o - p_e) / (1 - p_e) with both terms scaled by total^2
    let s2 = a.total * a.total;
    let num = a.correct * a.total - a.cross;
    let den = s2 - a.cross;
    if den == 0 {
        return Ok(if a.correct == a.total { F::one() } else { F::zero() });
    }
    Ok(from_i128::<F>(num) / from_i128::<F>(den))
}

/// All seven metrics of one tally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet<F = f64> {
    pub acc: F,
    pub f1: F,
    pub pre: F,
    pub sen: F,
    pub spe: F,
    pub mcc: F,
    pub ck: F,
}

impl<F: Scalar> MetricSet<F> {
    pub fn compute(t: &ConfusionTally) -> Result<Self, MetricsError> {
        Ok(MetricSet {
            acc: accuracy(t)?,
            f1: weighted_f1(t)?,
            pre: weighted_precision(t)?,
            sen: weighted_recall(t)?,
            spe: weighted_specificity(t)?,
            mcc: mcc(t)?,
            ck: cohens_kappa(t)?,
        })
    }

    pub fn as_array(&self) -> [F; 7] {
        [self.acc, self.f1, self.pre, self.sen, self.spe, self.mcc, self.ck]
    }

    pub const NAMES: [&'static str; 7] = ["ACC", "F1", "PRE", "SEN", "SPE", "MCC", "CK"];
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tally(m: &[&[u64]]) -> ConfusionTally {
        ConfusionTally::from_matrix(m.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn empty_tally_is_an_error() {
        let t = tally(&[&[0, 0], &[0, 0]]);
        assert_eq!(accuracy::<f64>(&t), Err(MetricsError::EmptyTally));
        assert_eq!(mcc::<f64>(&ConfusionTally::new()), Err(MetricsError::EmptyTally));
    }

    #[test]
    fn perfect_diagonal() {
        let m = MetricSet::<f64>::compute(&tally(&[&[3, 0, 0], &[0, 2, 0], &[0, 0, 4]])).unwrap();
        for v in m.as_array() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn two_class_uniform() {
        let t = tally(&[&[1, 1], &[1, 1]]);
        assert_eq!(accuracy::<f64>(&t).unwrap(), 0.5);
        assert_eq!(cohens_kappa::<f64>(&t).unwrap(), 0.0);
        assert_eq!(mcc::<f64>(&t).unwrap(), 0.0);
    }

    #[test]
    fn single_populated_class() {
        let t = tally(&[&[2, 0], &[0, 0]]);
        assert_eq!(weighted_f1::<f64>(&t).unwrap(), 1.0);
        assert_eq!(weighted_precision::<f64>(&t).unwrap(), 1.0);
        assert_eq!(weighted_recall::<f64>(&t).unwrap(), 1.0);
        // only one class has predictions: both variance factors vanish
        assert_eq!(mcc::<f64>(&t).unwrap(), 0.0);
        assert_eq!(cohens_kappa::<f64>(&t).unwrap(), 1.0);
    }

    #[test]
    fn fully_swapped_binary() {
        let t = tally(&[&[0, 2], &[2, 0]]);
        assert_eq!(weighted_specificity::<f64>(&t).unwrap(), 0.0);
        assert_eq!(mcc::<f64>(&t).unwrap(), -1.0);
        assert_eq!(cohens_kappa::<f64>(&t).unwrap(), -1.0);
    }

    #[test]
    fn one_predicted_class_gives_zero_mcc() {
        let t = tally(&[&[3, 0, 0], &[2, 0, 0], &[4, 0, 0]]);
        assert_eq!(mcc::<f64>(&t).unwrap(), 0.0);
    }

    #[test]
    fn binary_mcc_matches_closed_form() {
        // tp fn / fp tn
        let (tp, fn_, fp, tn) = (7.0f64, 3.0, 2.0, 8.0);
        let t = tally(&[&[7, 3], &[2, 8]]);
        let expected = (tp * tn - fp * fn_) / ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        assert!((mcc::<f64>(&t).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn abstentions_count_against_accuracy() {
        let mut t = ConfusionTally::new();
        t.add("A", Some("A"));
        t.add("B", Some("B"));
        let before = accuracy::<f64>(&t).unwrap();
        t.add("A", None);
        let after = accuracy::<f64>(&t).unwrap();
        assert!(after < before);
        assert_eq!(t.total(), 3);
        assert_eq!(t.abstain_count(), 1);
        assert_eq!(weighted_recall::<f64>(&t).unwrap(), after);
    }

    #[test]
    fn add_keeps_classes_sorted_and_merge_sums() {
        let mut a = ConfusionTally::new();
        a.add("C", Some("A"));
        a.add("A", Some("A"));
        assert_eq!(a.classes(), ["A", "C"]);
        let mut b = ConfusionTally::new();
        b.add("B", None);
        b.add("A", Some("A"));
        let m = a.merge(&b);
        assert_eq!(m.classes(), ["A", "B", "C"]);
        assert_eq!(m.total(), 4);
        assert_eq!(m.correct(), 2);
        assert_eq!(m.abstained(), [0, 1, 0]);
    }

    #[test]
    fn malformed_tallies_rejected() {
        assert!(ConfusionTally::from_matrix(vec![vec![1, 2]]).is_err());
        assert!(ConfusionTally::from_counts(vec!["a".into(), "a".into()], vec![vec![0; 2]; 2], vec![0; 2]).is_err());
    }

    #[test]
    fn f32_instantiation() {
        let t = tally(&[&[5, 1], &[2, 4]]);
        let m32 = MetricSet::<f32>::compute(&t).unwrap();
        let m64 = MetricSet::<f64>::compute(&t).unwrap();
        for (a, b) in m32.as_array().iter().zip(m64.as_array()) {
            assert!((f64::from(*a) - b).abs() < 1e-6);
        }
    }
}
