//! Classification metrics used when reporting downstream results.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    F1Positive,
    F1OvrMean,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::F1Positive => "f1_positive",
            MetricKind::F1OvrMean => "f1_ovr_mean",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(MetricKind::Accuracy),
            "f1_positive" => Ok(MetricKind::F1Positive),
            "f1_ovr_mean" => Ok(MetricKind::F1OvrMean),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

fn check_lengths(pred: &[usize], gold: &[usize]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::Metric(format!(
            "length mismatch: {} predictions, {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Metric("no predictions".into()));
    }
    Ok(())
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn binary_f1(pred: &[usize], gold: &[usize], positive: usize) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in pred.iter().zip(gold) {
        match (p == positive, g == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    f1_from_counts(tp, fp, fn_)
}

pub fn metric_accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    check_lengths(pred, gold)?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// F1 of the `positive` class in a binary problem. 0 when precision and
/// recall are both 0.
pub fn metric_f1_positive(pred: &[usize], gold: &[usize], positive: usize) -> Result<f64> {
    check_lengths(pred, gold)?;
    if positive > 1 || pred.iter().chain(gold).any(|&l| l > 1) {
        return Err(Error::Metric("non-binary labels present".into()));
    }
    Ok(binary_f1(pred, gold, positive))
}

/// Unweighted mean over classes of one-vs-rest F1.
pub fn metric_f1_ovr_mean(pred: &[usize], gold: &[usize], num_classes: usize) -> Result<f64> {
    check_lengths(pred, gold)?;
    if num_classes == 0 {
        return Err(Error::Metric("num_classes must be positive".into()));
    }
    if let Some(&bad) = pred.iter().chain(gold).find(|&&l| l >= num_classes) {
        return Err(Error::Metric(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let total: f64 = (0..num_classes).map(|c| binary_f1(pred, gold, c)).sum();
    Ok(total / num_classes as f64)
}

pub fn compute_metric(
    kind: MetricKind,
    pred: &[usize],
    gold: &[usize],
    num_classes: usize,
) -> Result<f64> {
    match kind {
        MetricKind::Accuracy => metric_accuracy(pred, gold),
        MetricKind::F1Positive => metric_f1_positive(pred, gold, 1),
        MetricKind::F1OvrMean => metric_f1_ovr_mean(pred, gold, num_classes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(metric_accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert_eq!(metric_accuracy(&[2, 1, 3], &[2, 1, 3]).unwrap(), 1.0);
        assert!(metric_accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn f1_positive_examples() {
        // TP=1 FP=1 FN=1
        let pred = [1, 1, 0, 0];
        let gold = [1, 0, 1, 0];
        assert_eq!(metric_f1_positive(&pred, &gold, 1).unwrap(), 0.5);
        assert_eq!(metric_f1_positive(&[0, 0], &[0, 0], 1).unwrap(), 0.0);
        assert!(metric_f1_positive(&[0, 2], &[0, 1], 1).is_err());
    }

    #[test]
    fn f1_ovr_examples() {
        assert_eq!(metric_f1_ovr_mean(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        let v = metric_f1_ovr_mean(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert!(metric_f1_ovr_mean(&[0, 3], &[0, 1], 3).is_err());
    }

    #[test]
    fn metric_kind_roundtrip() {
        for k in [
            MetricKind::Accuracy,
            MetricKind::F1Positive,
            MetricKind::F1OvrMean,
        ] {
            assert_eq!(k.as_str().parse::<MetricKind>().unwrap(), k);
        }
    }
}
