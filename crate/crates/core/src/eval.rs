//! Classification metrics with stable (label 1) as the positive class.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub variant: String,
    pub method: String,
    pub seed: u64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub acc: f64,
    /// `None` when the denominator is zero.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// `None` for single-class input or when no scores were supplied.
    pub auc: Option<f64>,
}

impl MetricsReport {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn with_context(mut self, split: &str, variant: &str, method: &str, seed: u64) -> Self {
        self.split = split.into();
        self.variant = variant.into();
        self.method = method.into();
        self.seed = seed;
        self
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn check_binary(values: &[u8], what: &str) -> Result<()> {
    if values.iter().any(|&v| v > 1) {
        return Err(Error::InvalidInput(format!("{what} must be 0 or 1")));
    }
    Ok(())
}

/// ACC, precision, recall and F1 (β = 1); `auc` is left undefined.
pub fn confusion_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricsReport> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    check_binary(predictions, "predictions")?;
    check_binary(labels, "labels")?;
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => tp += 1,
            (0, 0) => tn += 1,
            (1, 0) => fp += 1,
            _ => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(MetricsReport {
        split: String::new(),
        variant: String::new(),
        method: String::new(),
        seed: 0,
        tp,
        tn,
        fp,
        fn_,
        acc: (tp + tn) as f64 / labels.len() as f64,
        precision,
        recall,
        f1,
        auc: None,
    })
}

/// Mann–Whitney AUC from average ranks; ties count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    if scores.len() != labels.len() || scores.iter().any(|s| s.is_nan()) {
        return None;
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

/// Area under the ROC polyline by the trapezoid rule, thresholds at every
/// distinct score.
pub fn roc_auc_trapezoid(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 || scores.len() != labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp / pos, fp / neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Some(area)
}

/// Metrics from two-class logits: argmax decisions, logit margin as score.
pub fn evaluate(logits: &[[f64; 2]], labels: &[u8]) -> Result<MetricsReport> {
    let predictions: Vec<u8> = logits.iter().map(|l| u8::from(l[1] > l[0])).collect();
    let scores: Vec<f64> = logits.iter().map(|l| l[1] - l[0]).collect();
    let mut report = confusion_metrics(&predictions, labels)?;
    report.auc = auc(&scores, labels);
    Ok(report)
}

fn pct(v: Option<f64>) -> String {
    v.map_or("undef".to_string(), |v| format!("{:.2}", 100.0 * v))
}

/// Aligned text table, one row per report, metrics in percent.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let mut s = format!(
        "{:<8} {:<8} {:<6} {:>6} {:>7} {:>7} {:>9} {:>7} {:>7} {:>7}\n",
        "method", "variant", "split", "seed", "n", "ACC", "Precision", "Recall", "F1", "AUC"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<8} {:<8} {:<6} {:>6} {:>7} {:>7} {:>9} {:>7} {:>7} {:>7}",
            r.method,
            r.variant,
            r.split,
            r.seed,
            r.total(),
            pct(Some(r.acc)),
            pct(r.precision),
            pct(r.recall),
            pct(r.f1),
            pct(r.auc)
        );
    }
    s
}

pub fn to_json(reports: &[MetricsReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_worked_confusion() {
        // TP=3, TN=1, FP=1, FN=1
        let p = [1, 1, 1, 0, 1, 0];
        let y = [1, 1, 1, 0, 0, 1];
        let r = confusion_metrics(&p, &y).unwrap();
        assert_eq!((r.tp, r.tn, r.fp, r.fn_), (3, 1, 1, 1));
        assert!((r.acc - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.precision, Some(0.75));
        assert_eq!(r.recall, Some(0.75));
        assert!((r.f1.unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cases() {
        let r = confusion_metrics(&[1, 1], &[1, 1]).unwrap();
        assert_eq!((r.acc, r.precision, r.recall, r.f1), (1.0, Some(1.0), Some(1.0), Some(1.0)));
        let r = confusion_metrics(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(r.precision, None);
        let r = confusion_metrics(&[1, 1], &[0, 0]).unwrap();
        assert_eq!(r.acc, 0.0);
        assert_eq!(r.precision, Some(0.0));
        assert_eq!(r.recall, None);
        assert!(confusion_metrics(&[], &[]).is_err());
        assert!(confusion_metrics(&[2], &[1]).is_err());
    }

    #[test]
    fn auc_worked_values() {
        let s = [0.9, 0.8, 0.4, 0.3];
        assert_eq!(auc(&s, &[1, 1, 0, 0]), Some(1.0));
        assert_eq!(auc(&s, &[1, 0, 1, 0]), Some(0.75));
        assert_eq!(auc(&[0.5; 4], &[1, 0, 1, 0]), Some(0.5));
        assert_eq!(auc(&s, &[1, 1, 1, 1]), None);
        assert_eq!(roc_auc_trapezoid(&s, &[1, 0, 1, 0]), Some(0.75));
        assert_eq!(roc_auc_trapezoid(&[0.5; 4], &[1, 0, 1, 0]), Some(0.5));
    }

    #[test]
    fn report_renders() {
        let r = evaluate(&[[0.0, 1.0], [1.0, 0.0]], &[1, 0]).unwrap().with_context("T1", "gedf", "scl", 3);
        let t = format_table(std::slice::from_ref(&r));
        assert!(t.contains("100.00"));
        let back: Vec<MetricsReport> = serde_json::from_str(&to_json(std::slice::from_ref(&r)).unwrap()).unwrap();
        assert_eq!(back, vec![r]);
    }
}
