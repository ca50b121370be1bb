//! Confusion matrices, overall accuracy and mean intersection-over-union.

mod report;

use serde::{Deserialize, Serialize};

use crate::cloud::IGNORE;
use crate::{Error, Result};

pub use report::{DomainRow, StreamReport};

/// `counts[t * C + p]`: points of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Build from a row-major `C × C` table.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Shape(format!(
                "{} counts for {classes} classes",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count every pair whose true label is not [`IGNORE`].
    pub fn update(&mut self, truths: &[u8], preds: &[u8]) -> Result<()> {
        if truths.len() != preds.len() {
            return Err(Error::Shape(format!(
                "{} truths for {} predictions",
                truths.len(),
                preds.len()
            )));
        }
        let c = self.classes;
        if let Some(&p) = preds.iter().find(|&&p| p as usize >= c) {
            return Err(Error::Validation(format!(
                "predicted label {p} outside 0..{c}"
            )));
        }
        if let Some(&t) = truths.iter().find(|&&t| t != IGNORE && t as usize >= c) {
            return Err(Error::Validation(format!("true label {t} outside 0..{c}")));
        }
        for (&t, &p) in truths.iter().zip(preds) {
            if t != IGNORE {
                self.counts[t as usize * c + p as usize] += 1;
            }
        }
        Ok(())
    }

    /// Elementwise sum.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape(format!(
                "cannot merge {} and {} classes",
                self.classes, other.classes
            )));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Fraction of counted points on the diagonal; `None` when nothing was counted.
    pub fn overall_accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0)
            .then(|| (0..self.classes).map(|i| self.get(i, i)).sum::<u64>() as f64 / total as f64)
    }

    /// Per-class `TP / (TP + FP + FN)` and the mean over classes where it is defined.
    pub fn iou(&self) -> (Vec<Option<f64>>, Option<f64>) {
        let c = self.classes;
        let per: Vec<Option<f64>> = (0..c)
            .map(|i| {
                let tp = self.get(i, i);
                let row: u64 = (0..c).map(|j| self.get(i, j)).sum();
                let col: u64 = (0..c).map(|j| self.get(j, i)).sum();
                let denom = row + col - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect();
        let defined: Vec<f64> = per.iter().flatten().copied().collect();
        let mean =
            (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        (per, mean)
    }

    pub fn report(&self) -> MetricsReport {
        let (iou, miou) = self.iou();
        let class_points = (0..self.classes)
            .map(|i| (0..self.classes).map(|j| self.get(i, j)).sum())
            .collect();
        MetricsReport {
            oa: self.overall_accuracy(),
            excluded_classes: iou.iter().filter(|v| v.is_none()).count(),
            iou,
            miou,
            class_points,
        }
    }
}

/// Metrics of one confusion matrix. Undefined values are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub oa: Option<f64>,
    pub iou: Vec<Option<f64>>,
    pub miou: Option<f64>,
    /// Counted points per true class.
    pub class_points: Vec<u64>,
    /// Classes left out of the mIoU mean.
    pub excluded_classes: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise")
    }
}
