//! Spherical sub-cloud sampling and batching.

use rand::seq::index;
use rand::Rng as _;

use super::{dist2, PointCloud};
use crate::rng::Rng;
use crate::{Error, Result};

/// A fixed-size sample of a ball around `center`, positions recentred on it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubCloud {
    pub center: [f64; 3],
    pub positions: Vec<[f64; 3]>,
    pub features: Vec<f64>,
    pub source_indices: Vec<usize>,
}

impl SubCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// `B` sub-clouds of `N` points each. Carries no labels: ground truth stays
/// with the parent cloud and is looked up through `source_indices`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubCloudBatch {
    pub clouds: Vec<SubCloud>,
    pub feature_count: usize,
}

impl SubCloudBatch {
    pub fn new(clouds: Vec<SubCloud>, feature_count: usize) -> Result<Self> {
        let n = clouds
            .first()
            .map(SubCloud::len)
            .ok_or_else(|| Error::Shape("empty batch".into()))?;
        for c in &clouds {
            if c.len() != n || c.features.len() != n * feature_count || c.source_indices.len() != n
            {
                return Err(Error::Shape("sub-clouds must share one size".into()));
            }
        }
        Ok(Self {
            clouds,
            feature_count,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.clouds.len()
    }

    pub fn points_per_cloud(&self) -> usize {
        self.clouds[0].len()
    }

    pub fn total_points(&self) -> usize {
        self.batch_size() * self.points_per_cloud()
    }

    /// Parent-cloud index of every point, in batch order.
    pub fn source_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.clouds
            .iter()
            .flat_map(|c| c.source_indices.iter().copied())
    }

    pub fn centers(&self) -> Vec<[f64; 3]> {
        self.clouds.iter().map(|c| c.center).collect()
    }
}

pub fn sample_sphere(
    cloud: &PointCloud,
    center: [f64; 3],
    radius: f64,
    n_points: usize,
    rng: &mut Rng,
) -> Result<SubCloud> {
    if !(radius > 0.0) {
        return Err(Error::Validation(format!(
            "sphere radius must be positive, got {radius}"
        )));
    }
    if n_points == 0 {
        return Err(Error::Validation("sub-cloud size must be positive".into()));
    }
    let r2 = radius * radius;
    let inside: Vec<usize> = cloud
        .positions()
        .iter()
        .enumerate()
        .filter(|(_, p)| dist2(p, &center) <= r2)
        .map(|(i, _)| i)
        .collect();
    if inside.is_empty() {
        return Err(Error::EmptySphere);
    }
    let chosen: Vec<usize> = if inside.len() >= n_points {
        index::sample(rng, inside.len(), n_points)
            .into_iter()
            .map(|i| inside[i])
            .collect()
    } else {
        (0..n_points)
            .map(|_| inside[rng.random_range(0..inside.len())])
            .collect()
    };

    let f = cloud.feature_count();
    let mut positions = Vec::with_capacity(n_points);
    let mut features = Vec::with_capacity(n_points * f);
    for &i in &chosen {
        let p = cloud.positions()[i];
        positions.push([p[0] - center[0], p[1] - center[1], p[2] - center[2]]);
        features.extend_from_slice(cloud.feature_row(i));
    }
    Ok(SubCloud {
        center,
        positions,
        features,
        source_indices: chosen,
    })
}

/// Draw `b` sphere centres uniformly among the cloud's points and sample each ball.
pub fn make_batch(
    cloud: &PointCloud,
    b: usize,
    n_points: usize,
    radius: f64,
    rng: &mut Rng,
) -> Result<SubCloudBatch> {
    if b == 0 {
        return Err(Error::Validation("batch size must be positive".into()));
    }
    let clouds = (0..b)
        .map(|_| {
            let center = cloud.positions()[rng.random_range(0..cloud.len())];
            sample_sphere(cloud, center, radius, n_points, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    SubCloudBatch::new(clouds, cloud.feature_count())
}
