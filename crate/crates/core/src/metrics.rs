//! Confusion counts, Gmean, AUC, GSDI and the mu trade-off measure.

use serde::{Deserialize, Serialize};

use crate::disjuncts::DisjunctPartition;
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes, both in class-id order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape(
                format!("{} predictions", truth.len()),
                format!("{}", predicted.len()),
            ));
        }
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::Parameter(format!(
                    "class id out of range in pair ({t}, {p})"
                )));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    /// Binary matrix with class 0 negative and class 1 positive.
    pub fn binary(tp: usize, fn_: usize, tn: usize, fp: usize) -> Self {
        Self {
            counts: vec![vec![tn, fp], vec![fn_, tp]],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn recall(&self, class: usize) -> Result<f64> {
        let m = self.support(class);
        if m == 0 {
            return Err(Error::MetricUndefined(format!(
                "class {class} has no true points"
            )));
        }
        Ok(self.counts[class][class] as f64 / m as f64)
    }

    pub fn recalls(&self) -> Result<Vec<f64>> {
        (0..self.classes()).map(|c| self.recall(c)).collect()
    }
}

/// Geometric mean of a list of rates.
pub fn geometric_mean(values: &[f64]) -> f64 {
    if values.contains(&0.0) {
        return 0.0;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

/// Geometric mean of per-class recalls.
pub fn gmean(conf: &ConfusionMatrix) -> Result<f64> {
    Ok(geometric_mean(&conf.recalls()?))
}

/// `(1 + tpr - fpr) / 2` for two classes; for more, the mean over unordered class pairs of
/// the two-class value on the confusion restricted to those true classes, averaged over both
/// orientations.
pub fn auc(conf: &ConfusionMatrix) -> Result<f64> {
    let c = conf.classes();
    if c < 2 {
        return Err(Error::MetricUndefined(
            "AUC needs at least two classes".into(),
        ));
    }
    if c == 2 {
        let tpr = conf.recall(1)?;
        let fpr = conf.counts[0][1] as f64 / nonzero(conf.support(0), 0)?;
        return Ok((1.0 + tpr - fpr) / 2.0);
    }
    let present: Vec<usize> = (0..c).filter(|&k| conf.support(k) > 0).collect();
    if present.len() < 2 {
        return Err(Error::MetricUndefined(
            "AUC needs at least two populated classes".into(),
        ));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (ai, &a) in present.iter().enumerate() {
        for &b in &present[ai + 1..] {
            let one = |p: usize, q: usize| {
                let tpr = conf.counts[p][p] as f64 / conf.support(p) as f64;
                let fpr = conf.counts[q][p] as f64 / conf.support(q) as f64;
                (1.0 + tpr - fpr) / 2.0
            };
            total += (one(a, b) + one(b, a)) / 2.0;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

fn nonzero(m: usize, class: usize) -> Result<f64> {
    if m == 0 {
        Err(Error::MetricUndefined(format!(
            "class {class} has no true points"
        )))
    } else {
        Ok(m as f64)
    }
}

/// Disjunct-size-weighted accuracy per class, combined by geometric mean.
///
/// `outcomes[i]` is `Some(correct)` for evaluated points and `None` otherwise; disjuncts with
/// no evaluated point are skipped.
pub fn gsdi(partition: &DisjunctPartition, outcomes: &[Option<bool>]) -> Result<f64> {
    let mut factors = Vec::with_capacity(partition.per_class.len());
    for (c, parts) in partition.per_class.iter().enumerate() {
        let mut rows = Vec::new();
        for part in parts {
            let (mut hit, mut seen) = (0usize, 0usize);
            for &i in part {
                match outcomes.get(i).copied().flatten() {
                    Some(true) => {
                        hit += 1;
                        seen += 1;
                    }
                    Some(false) => seen += 1,
                    None => {}
                }
            }
            if seen > 0 {
                rows.push((part.len() as f64, hit as f64 / seen as f64));
            }
        }
        if rows.is_empty() {
            if parts.is_empty() {
                continue;
            }
            return Err(Error::MetricUndefined(format!(
                "class {c} has no evaluated points"
            )));
        }
        factors.push(weighted_accuracy(&rows));
    }
    if factors.is_empty() {
        return Err(Error::MetricUndefined("no evaluated points".into()));
    }
    Ok(geometric_mean(&factors))
}

/// `sum w_i a_i / sum w_i` with `w_i = exp(-(size_i - min size))`.
pub fn weighted_accuracy(rows: &[(f64, f64)]) -> f64 {
    let min = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let (num, den) = rows.iter().fold((0.0, 0.0), |(n, d), &(size, acc)| {
        let w = (-(size - min)).exp();
        (n + w * acc, d + w)
    });
    num / den
}

/// Per-classifier (rows) per-class (columns) recalls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracyTable {
    pub acc: Vec<Vec<f64>>,
}

impl ClassAccuracyTable {
    pub fn new(acc: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = acc.first() {
            let c = first.len();
            if acc.iter().any(|r| r.len() != c) {
                return Err(Error::shape(format!("{c} classes per row"), "ragged table"));
            }
            if acc.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Parameter("accuracies must lie in [0, 1]".into()));
            }
        }
        Ok(Self { acc })
    }
}

/// `mu_i = sum_c (a_ci - min_j a_cj) / (max_j a_cj - min_j a_cj)`; a class whose accuracies
/// are all equal contributes 0.
pub fn mu_scores(table: &ClassAccuracyTable) -> Result<Vec<f64>> {
    mu_raw(&table.acc)
}

fn mu_raw(acc: &[Vec<f64>]) -> Result<Vec<f64>> {
    let h = acc.len();
    if h < 2 {
        return Err(Error::Selection(format!(
            "need at least two classifiers, got {h}"
        )));
    }
    let c = acc[0].len();
    let mut mu = vec![0.0; h];
    for k in 0..c {
        let lo = acc.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
        let hi = acc.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            for (m, row) in mu.iter_mut().zip(acc) {
                *m += (row[k] - lo) / (hi - lo);
            }
        }
    }
    Ok(mu)
}

/// Index of the largest mu, lowest index on ties.
pub fn select_best(table: &ClassAccuracyTable) -> Result<usize> {
    let mu = mu_scores(table)?;
    Ok(argmax(&mu))
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
