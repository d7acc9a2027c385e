//! Classification metrics: accuracy, confusion counts, ROC/AUC and the
//! relative false-negative reduction used to compare losses.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the largest score; ties go to the lower index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(predictions: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_pairs(predictions.len(), labels.len())?;
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

fn check_pairs(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{a} predictions for {b} labels")));
    }
    if a == 0 {
        return Err(Error::EmptyDataset("no predictions to score".into()));
    }
    Ok(())
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Positives (class `positive`) predicted as anything else.
    pub fn false_negatives(&self, positive: usize) -> usize {
        let row = &self.counts[positive];
        row.iter().sum::<usize>() - row[positive]
    }

    pub fn false_positives(&self, positive: usize) -> usize {
        self.counts.iter().map(|r| r[positive]).sum::<usize>() - self.counts[positive][positive]
    }

    pub fn false_negative_rate(&self, positive: usize) -> Option<f64> {
        let actual: usize = self.counts[positive].iter().sum();
        (actual > 0).then(|| self.false_negatives(positive) as f64 / actual as f64)
    }
}

pub fn confusion(predictions: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    check_pairs(predictions.len(), labels.len())?;
    let mut counts = vec![vec![0; num_classes]; num_classes];
    for (p, &y) in predictions.iter().zip(labels) {
        let k = argmax(p);
        if y >= num_classes || k >= num_classes {
            return Err(Error::invalid(format!("class index out of range for {num_classes} classes")));
        }
        counts[y][k] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from scores for the positive class, thresholds descending.
/// Tied scores form a single step. Starts at (0, 0) with an infinite
/// threshold and ends at (1, 1).
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<Vec<RocPoint>> {
    check_pairs(scores.len(), positive.len())?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: "roc score".into(),
            index: i,
        });
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under the ROC curve.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let curve = roc_curve(scores, positive)?;
    Ok(curve
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum())
}

/// Fractional reduction `(baseline - candidate) / baseline`.
pub fn fn_reduction(baseline: f64, candidate: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::UndefinedReduction);
    }
    Ok((baseline - candidate) / baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub false_negatives: usize,
    pub false_negative_rate: Option<f64>,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub positive_class: usize,
}

impl MetricsReport {
    /// Scores predictive probabilities; `positive` selects the class whose
    /// misses count as false negatives and whose probability ranks the ROC.
    pub fn compute(probs: &[Vec<f64>], labels: &[usize], num_classes: usize, positive: usize) -> Result<Self> {
        let confusion = confusion(probs, labels, num_classes)?;
        let scores: Vec<f64> = probs.iter().map(|p| p[positive]).collect();
        let truth: Vec<bool> = labels.iter().map(|&y| y == positive).collect();
        let auc = match roc_auc(&scores, &truth) {
            Ok(a) => Some(a),
            Err(Error::UndefinedAuc) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            accuracy: accuracy(probs, labels)?,
            false_negatives: confusion.false_negatives(positive),
            false_negative_rate: confusion.false_negative_rate(positive),
            confusion,
            auc,
            positive_class: positive,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn write_roc_csv(points: &[RocPoint], path: &Path) -> Result<()> {
    let mut text = String::from("threshold,fpr,tpr\n");
    for p in points {
        text.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn onehot(k: usize) -> Vec<f64> {
        let mut v = vec![0.0; 2];
        v[k] = 1.0;
        v
    }

    #[test]
    fn accuracy_examples() {
        let preds = vec![onehot(0), onehot(1), onehot(1), onehot(0)];
        assert_eq!(accuracy(&preds, &[0, 1, 0, 0]).unwrap(), 0.75);
        assert_eq!(accuracy(&[vec![0.5, 0.5]], &[0]).unwrap(), 1.0);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&preds, &[0]).is_err());
    }

    #[test]
    fn auc_examples() {
        let auc = roc_auc(&[0.9, 0.8, 0.7, 0.6, 0.5, 0.4], &[true, true, false, true, false, false]).unwrap();
        assert_abs_diff_eq!(auc, 8.0 / 9.0, epsilon = 1e-12);
        assert_eq!(roc_auc(&[0.1, 0.2, 0.3, 0.4], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedAuc)));
    }

    #[test]
    fn fn_reduction_examples() {
        assert_abs_diff_eq!(fn_reduction(100.0, 88.3).unwrap(), 0.117, epsilon = 1e-12);
        assert_abs_diff_eq!(fn_reduction(100.0, 95.0).unwrap(), 0.05, epsilon = 1e-12);
        assert_eq!(fn_reduction(50.0, 50.0).unwrap(), 0.0);
        assert!(matches!(fn_reduction(0.0, 1.0), Err(Error::UndefinedReduction)));
    }

    #[test]
    fn confusion_counts() {
        let preds = vec![onehot(0), onehot(1), onehot(0), onehot(0), onehot(1)];
        let labels = [0, 1, 1, 1, 0];
        let m = confusion(&preds, &labels, 2).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1], vec![2, 1]]);
        assert_eq!(m.false_negatives(1), 2);
        assert_eq!(m.false_positives(1), 1);
        assert_eq!(m.total(), 5);
        assert_abs_diff_eq!(m.false_negative_rate(1).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn report_tolerates_single_class() {
        let r = MetricsReport::compute(&[onehot(0), onehot(0)], &[0, 0], 2, 1).unwrap();
        assert_eq!(r.auc, None);
        assert_eq!(r.false_negative_rate, None);
        assert!(r.to_json().unwrap().contains("\"accuracy\": 1.0"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mann_whitney(scores: &[f64], positive: &[bool]) -> f64 {
            let (mut wins, mut pairs) = (0.0, 0.0);
            for (i, &si) in scores.iter().enumerate() {
                for (j, &sj) in scores.iter().enumerate() {
                    if positive[i] && !positive[j] {
                        pairs += 1.0;
                        wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                    }
                }
            }
            wins / pairs
        }

        fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
            proptest::collection::vec((0u8..8, any::<bool>()), 2..40)
                .prop_map(|v| v.into_iter().map(|(s, p)| (f64::from(s) / 8.0, p)).unzip())
                .prop_filter("both classes", |(_, p): &(Vec<f64>, Vec<bool>)| p.iter().any(|&x| x) && p.iter().any(|&x| !x))
        }

        proptest! {
            #[test]
            fn auc_matches_pairwise_count((scores, positive) in labelled()) {
                let auc = roc_auc(&scores, &positive).unwrap();
                prop_assert!((0.0..=1.0).contains(&auc));
                prop_assert!((auc - mann_whitney(&scores, &positive)).abs() < 1e-12);
            }

            #[test]
            fn auc_invariant_under_monotone_maps((scores, positive) in labelled()) {
                let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
                let a = roc_auc(&scores, &positive).unwrap();
                let b = roc_auc(&mapped, &positive).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
