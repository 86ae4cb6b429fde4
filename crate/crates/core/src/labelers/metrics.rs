use serde::{Deserialize, Serialize};

use super::LabelerError;

/// Per-class metrics of a binary classifier. `_neg` treats the negative
/// class as the positive one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy_neg: f64,
    pub accuracy_pos: f64,
    pub precision_neg: f64,
    pub precision_pos: f64,
    pub recall_neg: f64,
    pub recall_pos: f64,
    pub f1_neg: f64,
    pub f1_pos: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub support_neg: usize,
    pub support_pos: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[bool], truth: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl ClassMetrics {
    /// Metrics from a confusion matrix; undefined precision or recall is 0.
    pub fn from_confusion(c: Confusion) -> Result<ClassMetrics, LabelerError> {
        let support_pos = c.tp + c.fn_;
        let support_neg = c.tn + c.fp;
        if support_pos == 0 || support_neg == 0 {
            return Err(LabelerError::DegenerateTruth);
        }
        let precision_pos = ratio(c.tp, c.tp + c.fp);
        let recall_pos = ratio(c.tp, support_pos);
        let precision_neg = ratio(c.tn, c.tn + c.fn_);
        let recall_neg = ratio(c.tn, support_neg);
        let f1_pos = f1(precision_pos, recall_pos);
        let f1_neg = f1(precision_neg, recall_neg);
        Ok(ClassMetrics {
            accuracy_neg: recall_neg,
            accuracy_pos: recall_pos,
            precision_neg,
            precision_pos,
            recall_neg,
            recall_pos,
            f1_neg,
            f1_pos,
            macro_f1: (f1_neg + f1_pos) / 2.0,
            accuracy: ratio(c.tp + c.tn, support_pos + support_neg),
            support_neg,
            support_pos,
        })
    }
}

/// Hard predictions are `p > threshold`.
pub fn compute_metrics(predictions: &[f64], truth: &[bool], threshold: f64) -> Result<ClassMetrics, LabelerError> {
    assert_eq!(predictions.len(), truth.len(), "predictions and truth must align");
    let hard: Vec<bool> = predictions.iter().map(|&p| p > threshold).collect();
    ClassMetrics::from_confusion(Confusion::from_predictions(&hard, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let m = ClassMetrics::from_confusion(Confusion { tp: 1, fp: 1, fn_: 0, tn: 2 }).unwrap();
        assert_eq!((m.precision_pos, m.recall_pos), (0.5, 1.0));
        assert!((m.f1_pos - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.precision_neg, 1.0);
        assert!((m.recall_neg - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1_neg - 0.8).abs() < 1e-15);
        assert!((m.macro_f1 - 11.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = compute_metrics(&[0.9, 0.1], &[true, false], 0.5).unwrap();
        assert_eq!((m.macro_f1, m.accuracy, m.f1_pos, m.f1_neg), (1.0, 1.0, 1.0, 1.0));
        assert!(matches!(compute_metrics(&[0.9], &[true], 0.5), Err(LabelerError::DegenerateTruth)));
    }

    #[test]
    fn threshold_is_strict() {
        let m = compute_metrics(&[0.5, 0.5], &[true, false], 0.5).unwrap();
        assert_eq!(m.recall_pos, 0.0);
        assert_eq!(m.recall_neg, 1.0);
    }
}
