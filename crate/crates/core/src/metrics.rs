//! Segmentation metrics: confusion matrix, per-class and mean IoU, and
//! overall accuracy.

use serde::Serialize;

use crate::cloud::UNLABELED;
use crate::error::{Error, Result};

/// Row = ground truth, column = prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    num_classes: usize,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![0; num_classes * num_classes],
            num_classes,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Confusion matrices over disjoint point sets add.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_classes, other.num_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Tally predictions against ground truth. Ground-truth entries equal to
/// [`UNLABELED`] are excluded; any other out-of-range value is an error.
pub fn confusion(pred: &[i32], gt: &[i32], num_classes: usize) -> Result<ConfusionMatrix> {
    if pred.len() != gt.len() {
        return Err(Error::validation(format!(
            "prediction length {} does not match ground truth length {}",
            pred.len(),
            gt.len()
        )));
    }
    let c = num_classes as i32;
    let mut cm = ConfusionMatrix::zeros(num_classes);
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        if g == UNLABELED {
            continue;
        }
        if !(0..c).contains(&g) {
            return Err(Error::validation(format!(
                "ground-truth class {g} at point {i} outside [0, {num_classes})"
            )));
        }
        if !(0..c).contains(&p) {
            return Err(Error::validation(format!(
                "predicted class {p} at point {i} outside [0, {num_classes})"
            )));
        }
        cm.counts[g as usize * num_classes + p as usize] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouResult {
    /// Per-class IoU; NaN marks classes with no ground truth and no
    /// predictions (excluded from the mean).
    pub per_class: Vec<f64>,
    pub mean: f64,
}

/// Intersection over union per class and its mean over supported classes.
/// A class with a positive denominator but zero true positives scores 0.
pub fn miou(cm: &ConfusionMatrix) -> IouResult {
    let c = cm.num_classes();
    let mut per_class = vec![f64::NAN; c];
    let mut sum = 0.0;
    let mut supported = 0usize;
    for (k, slot) in per_class.iter_mut().enumerate() {
        let tp = cm.count(k, k);
        let mut fp = 0;
        let mut fns = 0;
        for j in 0..c {
            if j != k {
                fp += cm.count(j, k);
                fns += cm.count(k, j);
            }
        }
        let denom = tp + fp + fns;
        if denom > 0 {
            let iou = tp as f64 / denom as f64;
            *slot = iou;
            sum += iou;
            supported += 1;
        }
    }
    let mean = if supported > 0 {
        sum / supported as f64
    } else {
        0.0
    };

    IouResult { per_class, mean }
}

/// Overall accuracy: trace over total, 0 on an empty matrix.
pub fn oa(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    let trace: u64 = (0..cm.num_classes()).map(|k| cm.count(k, k)).sum();
    trace as f64 / total as f64
}

/// JSON-serializable metric report (the `eval` command output).
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    /// Per-class IoU; `null` for classes without support.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub oa: f64,
    pub evaluated_points: u64,
}

impl MetricReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let iou = miou(cm);
        MetricReport {
            per_class_iou: iou
                .per_class
                .iter()
                .map(|&v| if v.is_nan() { None } else { Some(v) })
                .collect(),
            miou: iou.mean,
            oa: oa(cm),
            evaluated_points: cm.total(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
