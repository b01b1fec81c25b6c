//! Confusion counts and intersection-over-union.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[truth * classes + predicted]`. Counts are real-valued so they can
/// be decayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0.0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> f64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1.0;
    }

    /// Adds every valid `(label, prediction)` pair.
    pub fn accumulate(&mut self, predictions: &[usize], labels: &[usize], valid: &[bool]) -> Result<()> {
        if predictions.len() != labels.len() || valid.len() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "predictions/labels/valid",
                expected: labels.len(),
                got: predictions.len().min(valid.len()),
            });
        }
        for (pixel, ((&p, &y), &ok)) in predictions.iter().zip(labels).zip(valid).enumerate() {
            if !ok {
                continue;
            }
            for label in [y, p] {
                if label >= self.classes {
                    return Err(Error::LabelOutOfRange {
                        pixel,
                        label,
                        classes: self.classes,
                    });
                }
            }
            self.add(y, p);
        }
        Ok(())
    }

    /// Adds another matrix's counts; both must have the same class count.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes, "confusion matrices of different sizes");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.counts {
            *c *= factor;
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// `TP / (TP + FP + FN)`, or `None` when the class is neither present nor
    /// predicted.
    pub fn iou(&self, class: usize) -> Option<f64> {
        let tp = self.get(class, class);
        let fn_: f64 = (0..self.classes).map(|k| self.get(class, k)).sum::<f64>() - tp;
        let fp: f64 = (0..self.classes).map(|k| self.get(k, class)).sum::<f64>() - tp;
        let union = tp + fp + fn_;
        (union > 0.0).then(|| tp / union)
    }

    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes).map(|c| self.iou(c)).collect()
    }
}

/// Mean over the classes that have an IoU; `None` if no class does.
pub fn mean_iou(per_class: &[Option<f64>]) -> Option<f64> {
    let seen: Vec<f64> = per_class.iter().flatten().copied().collect();
    (!seen.is_empty()).then(|| seen.iter().sum::<f64>() / seen.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0, 1, 1, 0], &[0, 1, 1, 0], &[true; 4]).unwrap();
        assert_eq!(cm.per_class_iou(), vec![Some(1.0), Some(1.0)]);
    }

    #[test]
    fn constant_prediction() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0; 4], &[0, 0, 1, 1], &[true; 4]).unwrap();
        let iou = cm.per_class_iou();
        assert_eq!(iou, vec![Some(0.5), Some(0.0)]);
        assert_eq!(mean_iou(&iou), Some(0.25));
    }

    #[test]
    fn absent_class_is_excluded() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[0, 1], &[0, 1], &[true, true]).unwrap();
        let iou = cm.per_class_iou();
        assert_eq!(iou[2], None);
        assert_eq!(mean_iou(&iou), Some(1.0));
        assert_eq!(mean_iou(&[None, None]), None);
    }

    #[test]
    fn masked_and_out_of_range() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[1, 7], &[0, 9], &[true, false]).unwrap();
        assert_eq!(cm.total(), 1.0);
        assert!(cm.accumulate(&[2], &[0], &[true]).is_err());
        assert!(cm.accumulate(&[0], &[0, 1], &[true]).is_err());
    }
}
