//! Point-cloud data model.

use crate::error::{Error, Result};

/// Sentinel label for points without ground truth.
pub const UNLABELED: i32 = -1;

/// An immutable colored point cloud, optionally carrying per-point class
/// labels. Positions are meters, colors are sRGB components in [0, 1],
/// labels lie in [0, num_classes) or are [`UNLABELED`].
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    colors: Vec<[f64; 3]>,
    labels: Option<Vec<i32>>,
    num_classes: usize,
}

impl PointCloud {
    pub fn new(
        positions: Vec<[f64; 3]>,
        colors: Vec<[f64; 3]>,
        labels: Option<Vec<i32>>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::validation("num_classes must be positive"));
        }
        if colors.len() != positions.len() {
            return Err(Error::validation(format!(
                "colors length {} does not match positions length {}",
                colors.len(),
                positions.len()
            )));
        }
        for (index, p) in positions.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFiniteCoordinate { index });
            }
        }
        for (i, c) in colors.iter().enumerate() {
            if !c.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
                return Err(Error::validation(format!(
                    "color component out of [0, 1] at point {i}"
                )));
            }
        }
        if let Some(ls) = &labels {
            if ls.len() != positions.len() {
                return Err(Error::validation(format!(
                    "labels length {} does not match positions length {}",
                    ls.len(),
                    positions.len()
                )));
            }
            for (i, &l) in ls.iter().enumerate() {
                if l != UNLABELED && !(0..num_classes as i32).contains(&l) {
                    return Err(Error::validation(format!(
                        "label {l} at point {i} outside [0, {num_classes})"
                    )));
                }
            }
        }
        Ok(PointCloud {
            positions,
            colors,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn labels(&self) -> Option<&[i32]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Drop the label channel (used by PLY export with labels disabled).
    pub fn without_labels(&self) -> PointCloud {
        PointCloud {
            positions: self.positions.clone(),
            colors: self.colors.clone(),
            labels: None,
            num_classes: self.num_classes,
        }
    }

    /// Number of ground-truth points per class (unlabeled points excluded).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        if let Some(ls) = &self.labels {
            for &l in ls {
                if l != UNLABELED {
                    counts[l as usize] += 1;
                }
            }
        }
        counts
    }
}
