//! Straight-from-definition reference implementations used by the tests.
#![allow(dead_code)]

use colab_core::metrics::ConfusionTally;

/// Full-table Levenshtein distance over chars.
pub fn dp_levenshtein(a: &[char], b: &[char]) -> usize {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in table.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in table[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = table[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            table[i][j] = sub.min(table[i - 1][j] + 1).min(table[i][j - 1] + 1);
        }
    }
    table[a.len()][b.len()]
}

/// Best window similarity by trying every window.
pub fn brute_partial_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 100.0;
    }
    let m = short.len();
    let best = (0..=long.len() - m).map(|s| dp_levenshtein(&short, &long[s..s + m])).min().unwrap();
    (1.0 - best as f64 / m as f64) * 100.0
}

pub fn brute_diversity(a: &str, b: &str) -> f64 {
    100.0 - brute_partial_similarity(a, b)
}

/// The tally expanded into one `(gold, predicted)` index pair per item;
/// `None` is an abstention.
pub fn items(t: &ConfusionTally) -> Vec<(usize, Option<usize>)> {
    let mut out = Vec::new();
    for (g, row) in t.counts().iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            out.extend(std::iter::repeat_n((g, Some(p)), n as usize));
        }
        out.extend(std::iter::repeat_n((g, None), t.abstained()[g] as usize));
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct OracleMetrics {
    pub acc: f64,
    pub f1: f64,
    pub pre: f64,
    pub sen: f64,
    pub spe: f64,
    pub mcc: f64,
    pub ck: f64,
}

impl OracleMetrics {
    pub fn as_array(&self) -> [f64; 7] {
        [self.acc, self.f1, self.pre, self.sen, self.spe, self.mcc, self.ck]
    }
}

fn div0(n: f64, d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        n / d
    }
}

/// Every metric recounted item by item.
pub fn oracle_metrics(t: &ConfusionTally) -> OracleMetrics {
    let items = items(t);
    let n = items.len() as f64;
    let k = t.classes().len();
    let acc = items.iter().filter(|(g, p)| *p == Some(*g)).count() as f64 / n;

    let (mut f1, mut pre, mut sen, mut spe) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..k {
        let count = |f: &dyn Fn(usize, Option<usize>) -> bool| items.iter().filter(|(g, p)| f(*g, *p)).count() as f64;
        let tp = count(&|g, p| g == c && p == Some(c));
        let fp = count(&|g, p| g != c && p == Some(c));
        let fn_ = count(&|g, p| g == c && p != Some(c));
        let tn = count(&|g, p| g != c && p != Some(c));
        let w = (tp + fn_) / n;
        let precision = div0(tp, tp + fp);
        let recall = div0(tp, tp + fn_);
        pre += w * precision;
        sen += w * recall;
        f1 += w * div0(2.0 * precision * recall, precision + recall);
        spe += w * div0(tn, tn + fp);
    }

    // one-hot covariance form; abstention is an extra predicted column
    let cols = k + 1;
    let onehot_gold = |g: usize| (0..cols).map(move |j| if j == g { 1.0 } else { 0.0 });
    let onehot_pred = |p: Option<usize>| (0..cols).map(move |j| if j == p.unwrap_or(k) { 1.0 } else { 0.0 });
    let mean = |v: &dyn Fn(usize) -> f64| (0..cols).map(|j| (j, v(j))).collect::<Vec<_>>();
    let gold_mean = mean(&|j| items.iter().filter(|(g, _)| *g == j).count() as f64 / n);
    let pred_mean = mean(&|j| items.iter().filter(|(_, p)| p.unwrap_or(k) == j).count() as f64 / n);
    let (mut cxy, mut cxx, mut cyy) = (0.0, 0.0, 0.0);
    for (g, p) in &items {
        for ((j, x), y) in onehot_gold(*g).enumerate().zip(onehot_pred(*p)) {
            let dx = x - gold_mean[j].1;
            let dy = y - pred_mean[j].1;
            cxy += dx * dy;
            cxx += dx * dx;
            cyy += dy * dy;
        }
    }
    let mcc = if cxx == 0.0 || cyy == 0.0 { 0.0 } else { cxy / (cxx * cyy).sqrt() };

    let pe: f64 = (0..k).map(|j| gold_mean[j].1 * pred_mean[j].1).sum();
    let ck = if (1.0 - pe).abs() < 1e-15 {
        if acc == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (acc - pe) / (1.0 - pe)
    };
    OracleMetrics { acc, f1, pre, sen, spe, mcc, ck }
}
