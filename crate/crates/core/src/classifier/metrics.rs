use std::fmt::Write as _;

use serde::Serialize;

use crate::dataio::Class;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Confusion matrix and the per-class / macro-averaged scores derived from it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; 3]; 3],
    pub per_class: [ClassMetrics; 3],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub total: usize,
    /// Set when a precision or recall had an empty denominator and was defined as 0.
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Panics if the slices differ in length or hold codes above 2.
    pub fn from_predictions(truth: &[u8], predicted: &[u8]) -> EvalReport {
        assert_eq!(
            truth.len(),
            predicted.len(),
            "truth/prediction length mismatch"
        );
        let mut confusion = [[0usize; 3]; 3];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t as usize][p as usize] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn from_confusion(confusion: [[usize; 3]; 3]) -> EvalReport {
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..3).map(|k| confusion[k][k]).sum();
        let mut warnings = Vec::new();
        let mut per_class = [ClassMetrics::default(); 3];
        for class in Class::ALL {
            let k = class.index();
            let tp = confusion[k][k] as f64;
            let support: usize = confusion[k].iter().sum();
            let predicted: usize = (0..3).map(|t| confusion[t][k]).sum();
            let precision = if predicted == 0 {
                warnings.push(format!("{class}: never predicted, precision set to 0"));
                0.0
            } else {
                tp / predicted as f64
            };
            let recall = if support == 0 {
                warnings.push(format!("{class}: no samples, recall set to 0"));
                0.0
            } else {
                tp / support as f64
            };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            per_class[k] = ClassMetrics {
                precision,
                recall,
                f1,
                support,
            };
        }
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / 3.0;
        EvalReport {
            confusion,
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            per_class,
            accuracy: if total == 0 {
                0.0
            } else {
                correct as f64 / total as f64
            },
            total,
            warnings,
        }
    }

    /// `class,precision,recall,f1,support` rows plus an `average` row.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for class in Class::ALL {
            let m = &self.per_class[class.index()];
            let _ = writeln!(
                out,
                "{class},{:.6},{:.6},{:.6},{}",
                m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(
            out,
            "average,{:.6},{:.6},{:.6},{}",
            self.macro_precision, self.macro_recall, self.macro_f1, self.total
        );
        out
    }

    /// Rows are true classes, columns predictions.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\predicted,BG,N+,N-\n");
        for class in Class::ALL {
            let row = &self.confusion[class.index()];
            let _ = writeln!(out, "{class},{},{},{}", row[0], row[1], row[2]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let truth = [0u8, 1, 2, 2, 1, 0];
        let r = EvalReport::from_predictions(&truth, &truth);
        assert_eq!(r.confusion, [[2, 0, 0], [0, 2, 0], [0, 0, 2]]);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(
            (r.macro_precision, r.macro_recall, r.macro_f1),
            (1.0, 1.0, 1.0)
        );
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn hand_computed_ten_samples() {
        let truth = [0u8, 0, 0, 0, 1, 1, 1, 2, 2, 2];
        let pred = [0u8, 0, 0, 1, 1, 1, 2, 2, 2, 0];
        let r = EvalReport::from_predictions(&truth, &pred);
        assert_eq!(r.confusion, [[3, 1, 0], [0, 2, 1], [1, 0, 2]]);
        assert_eq!(r.accuracy, 0.7);
        // BG: tp 3, predicted 4, support 4
        assert!((r.per_class[0].precision - 0.75).abs() < 1e-12);
        assert!((r.per_class[0].recall - 0.75).abs() < 1e-12);
        // N+: tp 2, predicted 3, support 3
        assert!((r.per_class[1].precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class[1].f1 - 2.0 / 3.0).abs() < 1e-12);
        // N-: tp 2, predicted 3, support 3
        assert!((r.per_class[2].recall - 2.0 / 3.0).abs() < 1e-12);
        let macro_p = (0.75 + 2.0 / 3.0 + 2.0 / 3.0) / 3.0;
        assert!((r.macro_precision - macro_p).abs() < 1e-12);
        assert_eq!(r.per_class.map(|m| m.support), [4, 3, 3]);
    }

    #[test]
    fn empty_class_sets_warning() {
        let r = EvalReport::from_predictions(&[0, 0, 1], &[0, 0, 0]);
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.per_class[2].recall, 0.0);
        assert!(r.warnings.len() >= 2);
    }

    #[test]
    fn csv_shapes() {
        let r = EvalReport::from_predictions(&[0, 1, 2], &[0, 1, 2]);
        assert_eq!(r.metrics_csv().lines().count(), 5);
        assert_eq!(r.confusion_csv().lines().nth(2).unwrap(), "N+,0,1,0");
    }
}
