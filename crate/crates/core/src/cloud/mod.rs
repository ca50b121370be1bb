//! Point-cloud containers and the geometric plumbing shared by every other module.

mod batch;
mod io;
mod knn;
mod subsample;

pub use batch::{make_batch, sample_sphere, SubCloud, SubCloudBatch};
pub use io::{load_cloud, parse_cloud, save_cloud, write_cloud};
pub use knn::{knn, NeighborIndex};
pub use subsample::grid_subsample;

use crate::{Error, Result};

/// Label of points without ground truth (injected noise points).
pub const IGNORE: u8 = 255;

/// A labelled or unlabelled point cloud.
///
/// Features are stored row-major, `feature_count` values per point; feature 0
/// plays the role of LiDAR intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    features: Vec<f64>,
    feature_count: usize,
    labels: Option<Vec<u8>>,
    class_count: usize,
}

impl PointCloud {
    pub fn new(
        positions: Vec<[f64; 3]>,
        features: Vec<f64>,
        feature_count: usize,
        labels: Option<Vec<u8>>,
        class_count: usize,
    ) -> Result<Self> {
        let cloud = Self {
            positions,
            features,
            feature_count,
            labels,
            class_count,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::NoPoints);
        }
        if self.feature_count == 0 {
            return Err(Error::Validation("feature count must be at least 1".into()));
        }
        if self.class_count < 2 || self.class_count > IGNORE as usize {
            return Err(Error::Validation(format!(
                "class count {} outside [2, {}]",
                self.class_count, IGNORE
            )));
        }
        if self.features.len() != n * self.feature_count {
            return Err(Error::Validation(format!(
                "{} feature values for {} points with {} features",
                self.features.len(),
                n,
                self.feature_count
            )));
        }
        if let Some((i, _)) = self
            .positions
            .iter()
            .enumerate()
            .find(|(_, p)| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::Validation(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        if self.features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::Validation(format!(
                    "{} labels for {} points",
                    labels.len(),
                    n
                )));
            }
            if let Some(&bad) = labels
                .iter()
                .find(|&&l| l != IGNORE && l as usize >= self.class_count)
            {
                return Err(Error::Validation(format!(
                    "label {bad} not below class count {}",
                    self.class_count
                )));
            }
        }
        Ok(())
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

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_count..(i + 1) * self.feature_count]
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Cloud without its labels, e.g. to feed an adaptation stream.
    pub fn without_labels(&self) -> PointCloud {
        PointCloud {
            labels: None,
            ..self.clone()
        }
    }

    /// New cloud with the same features/labels but different coordinates.
    pub fn with_positions(&self, positions: Vec<[f64; 3]>) -> Result<PointCloud> {
        if positions.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} positions for a cloud of {} points",
                positions.len(),
                self.len()
            )));
        }
        PointCloud::new(
            positions,
            self.features.clone(),
            self.feature_count,
            self.labels.clone(),
            self.class_count,
        )
    }

    /// Subset of the cloud in the given index order.
    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        let f = self.feature_count;
        let positions = indices.iter().map(|&i| self.positions[i]).collect();
        let mut features = Vec::with_capacity(indices.len() * f);
        for &i in indices {
            features.extend_from_slice(self.feature_row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        PointCloud::new(positions, features, f, labels, self.class_count)
    }

    /// Append points. `labels` must be given exactly when this cloud is labelled.
    pub fn extend(
        &mut self,
        positions: &[[f64; 3]],
        features: &[f64],
        labels: Option<&[u8]>,
    ) -> Result<()> {
        match (&mut self.labels, labels) {
            (Some(own), Some(new)) => own.extend_from_slice(new),
            (None, None) => {}
            _ => return Err(Error::Shape("label presence mismatch on extend".into())),
        }
        self.positions.extend_from_slice(positions);
        self.features.extend_from_slice(features);
        self.validate()
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }
}

pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
