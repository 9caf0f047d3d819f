use std::fmt;

use crate::{Error, Result};

/// Binary confusion counts; class 1 is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn from_pairs(labels: &[usize], predictions: &[usize]) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::shape(
                "confusion",
                "predictions",
                labels.len(),
                predictions.len(),
            ));
        }
        let mut cm = ConfusionMatrix::default();
        for (&y, &p) in labels.iter().zip(predictions) {
            cm.record(y, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, label: usize, prediction: usize) -> Result<()> {
        match (label, prediction) {
            (1, 1) => self.tp += 1,
            (0, 1) => self.fp += 1,
            (1, 0) => self.fn_ += 1,
            (0, 0) => self.tn += 1,
            (l, p) => {
                return Err(Error::LabelOutOfRange {
                    label: l.max(p),
                    classes: 2,
                })
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts seen with class 0 as positive.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// F1 straight from counts, `2TP / (2TP + FP + FN)`.
pub fn f1_from_counts(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Recall,
    Specificity,
    Precision,
    F1,
    Accuracy,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Recall,
        Metric::Specificity,
        Metric::Precision,
        Metric::F1,
        Metric::Accuracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Specificity => "specificity",
            Metric::Precision => "precision",
            Metric::F1 => "f1",
            Metric::Accuracy => "accuracy",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Metric::Recall => "Recall",
            Metric::Specificity => "Specificity",
            Metric::Precision => "Precision",
            Metric::F1 => "F1-score",
            Metric::Accuracy => "Accuracy",
        }
    }
}

/// Metric values; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let recall = ratio(cm.tp, cm.tp + cm.fn_);
        let precision = ratio(cm.tp, cm.tp + cm.fp);
        let f1 = match (recall, precision) {
            (Some(r), Some(p)) if r + p > 0.0 => Some(2.0 * r * p / (r + p)),
            _ => None,
        };
        MetricsReport {
            recall,
            specificity: ratio(cm.tn, cm.tn + cm.fp),
            precision,
            f1,
            accuracy: ratio(cm.tp + cm.tn, cm.total()),
        }
    }

    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Recall => self.recall,
            Metric::Specificity => self.specificity,
            Metric::Precision => self.precision,
            Metric::F1 => self.f1,
            Metric::Accuracy => self.accuracy,
        }
    }

    fn set(&mut self, m: Metric, v: Option<f64>) {
        *match m {
            Metric::Recall => &mut self.recall,
            Metric::Specificity => &mut self.specificity,
            Metric::Precision => &mut self.precision,
            Metric::F1 => &mut self.f1,
            Metric::Accuracy => &mut self.accuracy,
        } = v;
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, m) in Metric::ALL.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}={}", m.name(), super::format_metric(self.get(*m)))?;
        }
        Ok(())
    }
}

/// Per-fold metrics with their unweighted mean and population standard
/// deviation, plus micro-averaged metrics over the pooled counts.
///
/// A fold whose metric is undefined is left out of that metric's mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub folds: Vec<MetricsReport>,
    pub mean: MetricsReport,
    pub std: MetricsReport,
    pub micro: MetricsReport,
}

impl Summary {
    pub fn new(confusions: &[ConfusionMatrix]) -> Self {
        let folds: Vec<MetricsReport> = confusions.iter().map(MetricsReport::from_confusion).collect();
        let mut pooled = ConfusionMatrix::default();
        confusions.iter().for_each(|c| pooled.merge(c));
        let (mean, std) = mean_std(&folds);
        Summary {
            folds,
            mean,
            std,
            micro: MetricsReport::from_confusion(&pooled),
        }
    }
}

/// Mean and population standard deviation of each metric over the reports
/// where it is defined.
pub(crate) fn mean_std(reports: &[MetricsReport]) -> (MetricsReport, MetricsReport) {
    let mut mean = MetricsReport::default();
    let mut std = MetricsReport::default();
    for m in Metric::ALL {
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.get(m)).collect();
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let mu = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        mean.set(m, Some(mu));
        std.set(m, Some(var.sqrt()));
    }
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, fn_, tn }
    }

    #[test]
    fn perfect() {
        let r = MetricsReport::from_confusion(&cm(1, 0, 0, 1));
        for m in Metric::ALL {
            assert_eq!(r.get(m), Some(1.0));
        }
    }

    #[test]
    fn undefined_is_explicit() {
        let r = MetricsReport::from_confusion(&cm(0, 0, 0, 5));
        assert_eq!(r.recall, None);
        assert_eq!(r.precision, None);
        assert_eq!(r.f1, None);
        assert_eq!(r.specificity, Some(1.0));
        assert_eq!(
            r.to_string(),
            "recall=undefined specificity=1.0000 precision=undefined f1=undefined accuracy=1.0000"
        );
    }

    #[test]
    fn equal_recall_precision_gives_that_f1() {
        let r = MetricsReport::from_confusion(&cm(6, 2, 2, 5));
        assert_eq!(r.recall, r.precision);
        assert!((r.f1.unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn aggregation() {
        let a = MetricsReport {
            accuracy: Some(0.8),
            ..Default::default()
        };
        let b = MetricsReport {
            accuracy: Some(1.0),
            ..Default::default()
        };
        let (mean, std) = mean_std(&[a, b]);
        assert!((mean.accuracy.unwrap() - 0.9).abs() < 1e-15);
        assert!((std.accuracy.unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(mean.recall, None);
        let same = Summary::new(&[cm(3, 1, 2, 4); 4]);
        assert_eq!(same.mean, same.folds[0]);
        assert_eq!(same.std.accuracy, Some(0.0));
    }

    #[test]
    fn rejects_non_binary() {
        assert!(ConfusionMatrix::from_pairs(&[2], &[0]).is_err());
        assert!(ConfusionMatrix::from_pairs(&[0, 1], &[0]).is_err());
    }

    proptest! {
        #[test]
        fn invariants(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
            let c = cm(tp, fp, fn_, tn);
            let r = MetricsReport::from_confusion(&c);
            for m in Metric::ALL {
                if let Some(v) = r.get(m) {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            if let (Some(a), Some(b)) = (r.f1, f1_from_counts(&c)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let s = MetricsReport::from_confusion(&c.swapped());
            prop_assert_eq!(s.recall, r.specificity);
            prop_assert_eq!(s.specificity, r.recall);
            prop_assert_eq!(s.precision, ratio(tn, tn + fn_));
        }
    }
}
