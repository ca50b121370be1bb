//! The seven corruption generators. All are pure functions of the input
//! cloud, the severity parameters and the random stream.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::table::{level, per_10k, CorruptionKind, SeverityTable};
use crate::cloud::{dist2, PointCloud, IGNORE};
use crate::rng::Rng;
use crate::{Error, Result};

/// Apply `kind` at `severity` (0 = identity).
pub fn corrupt(
    kind: CorruptionKind,
    cloud: &PointCloud,
    severity: u8,
    table: &SeverityTable,
    rng: &mut Rng,
) -> Result<PointCloud> {
    match kind {
        CorruptionKind::Sunlight => sunlight(cloud, severity, table, rng),
        CorruptionKind::Space => space_noise(cloud, severity, table, rng),
        CorruptionKind::Uniform => uniform_noise(cloud, severity, table, rng),
        CorruptionKind::Density => density_decrease(cloud, severity, table, rng),
        CorruptionKind::Cutout => cutout(cloud, severity, table, rng),
        CorruptionKind::Impulse => impulse_noise(cloud, severity, table, rng),
        CorruptionKind::Gaussian => gaussian_noise(cloud, severity, table, rng),
    }
}

fn gaussian(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma is finite and non-negative")
}

/// Displace `count` distinct random points with `offset`; the chosen indices
/// are visited in ascending order so results do not depend on sampling order.
fn displace_subset(
    cloud: &PointCloud,
    count: usize,
    rng: &mut Rng,
    mut offset: impl FnMut(&mut Rng) -> [f64; 3],
) -> Result<PointCloud> {
    if count == 0 {
        return Ok(cloud.clone());
    }
    let mut chosen = sample(rng, cloud.len(), count.min(cloud.len())).into_vec();
    chosen.sort_unstable();
    let mut positions = cloud.positions().to_vec();
    for i in chosen {
        let d = offset(rng);
        for a in 0..3 {
            positions[i][a] += d[a];
        }
    }
    cloud.with_positions(positions)
}

fn displace_all(
    cloud: &PointCloud,
    rng: &mut Rng,
    mut offset: impl FnMut(&mut Rng) -> f64,
) -> Result<PointCloud> {
    let positions = cloud
        .positions()
        .iter()
        .map(|p| [p[0] + offset(rng), p[1] + offset(rng), p[2] + offset(rng)])
        .collect();
    cloud.with_positions(positions)
}

/// Strong sunlight: a fraction of the points receives a large isotropic
/// Gaussian offset.
pub fn sunlight(
    cloud: &PointCloud,
    severity: u8,
    table: &SeverityTable,
    rng: &mut Rng,
) -> Result<PointCloud> {
    let Some(l) = level(severity)? else {
        return Ok(cloud.clone());
    };
    let normal = gaussian(table.sunlight_sigma);
    let count = per_10k(cloud.len(), table.sunlight_per_10k[l]);
    displace_subset(cloud, count, rng, |r| {
        [normal.sample(r), normal.sample(r), normal.sample(r)]
    })
}

/// Remove `⌊r · N⌋` uniformly chosen points.
pub fn density_decrease(
    cloud: &PointCloud,
    severity: u8,
    table: &SeverityTable,
    rng: &mut Rng,
) -> Result<PointCloud> {
    let Some(l) = level(severity)? else {
        return Ok(cloud.clone());
    };
    let n = cloud.len();
    let removed = per_10k(n, table.density_per_10k[l]);
    if removed == 0 {
        return Ok(cloud.clone());
    }
    if removed >= n {
        return Err(Error::Exhausted(format!(
            "density decrease would remove all {n} points"
        )));
    }
    let mut keep = sample(rng, n, n - removed).into_vec();
    keep.sort_unstable();
    cloud.select(&keep)
}

/// Remove `G` local groups, each a random point and its nearest neighbours,
/// drawn one after another on the shrinking cloud.
pub fn cutout(
    cloud: &PointCloud,
    severity: u8,
    table: &SeverityTable,
    rng: &mut Rng,
) -> Result<PointCloud> {
    let Some(l) = level(severity)? else {
        return Ok(cloud.clone());
    };
    let n = cloud.len();
    let (num, den) = table.cutout_group_fraction;
    let group = (num * n / den).max(1);
    let positions = cloud.positions();
    let mut alive: Vec<usize> = (0..n).collect();
    for _ in 0..table.cutout_groups[l] {
        if alive.len() <= group {
            return Err(Error::Exhausted(format!(
                "cutout group of {group} points needs more than the {} remaining",
                alive.len()
            )));
        }
        let center = positions[alive[rng.random_range(0..alive.len())]];
        let mut by_distance: Vec<(f64, usize)> = alive
            .iter()
            .map(|&i| (dist2(&positions[i], &center), i))
            .collect();
        by_distance
            .select_nth_unstable_by(group - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let gone: BTreeSet<usize> = by_distance[..group].iter().map(|&(_, i)| i).collect();
        alive.retain(|i| !gone.contains(i));
    }
    cloud.select(&alive)
}

/// Per-axis Gaussian offset on every point.
pub fn gaussian_noise(
    cloud: &PointCloud,
    severity: u8,
    table: &SeverityTable,
    rng: &mut Rng,
) -> Result<PointCloud> {
    let Some(l) = level(severity)? else {
        return Ok(cloud.clone());
    };
    let normal = gaussian(table.gaussian_sigma[l]);
    displace_all(cloud, rng, |r| normal.sample(r))
}

/// Per-axis offset drawn from `U(−s, s)` on every point.
pub fn uniform_noise(
    cloud: &PointCloud,
    severity: u8,
    table: &SeverityTable,
    rng: &mut Rng,
) -> Result<PointCloud> {
    let Some(l) = level(severity)? else {
        return Ok(cloud.clone());
    };
    let s = table.uniform_half_width[l];
    if s == 0.0 {
        return Ok(cloud.clone());
    }
    displace_all(cloud, rng, |r| r.random_range(-s..=s))
}

/// A fraction of the points is shifted by exactly `±s_imp` on each axis.
pub fn impulse_noise(
    cloud: &PointCloud,
    severity: u8,
    table: &SeverityTable,
    rng: &mut Rng,
) -> Result<PointCloud> {
    let Some(l) = level(severity)? else {
        return Ok(cloud.clone());
    };
    let count = table.impulse_numerator * cloud.len() / table.impulse_denominators[l];
    let s = table.impulse_magnitude;
    let sign = |r: &mut Rng| if r.random::<bool>() { s } else { -s };
    displace_subset(cloud, count, rng, |r| [sign(r), sign(r), sign(r)])
}

/// Uniform points inside every occupied cell of a grid over the bounding box.
/// Added points carry zero features and the ignore label.
pub fn space_noise(
    cloud: &PointCloud,
    severity: u8,
    table: &SeverityTable,
    rng: &mut Rng,
) -> Result<PointCloud> {
    let Some(l) = level(severity)? else {
        return Ok(cloud.clone());
    };
    let per_cell = table.space_points_per_cell[l];
    let cells = occupied_cells(cloud, table.space_grid);
    if per_cell == 0 || cells.is_empty() {
        return Ok(cloud.clone());
    }
    let (lo, hi) = cloud.bounds();
    let g = table.space_grid as f64;
    let size: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]) / g).collect();
    let mut added = Vec::with_capacity(cells.len() * per_cell);
    for cell in &cells {
        for _ in 0..per_cell {
            let mut p = [0.0; 3];
            for a in 0..3 {
                let start = lo[a] + cell[a] as f64 * size[a];
                p[a] = if size[a] > 0.0 {
                    start + rng.random::<f64>() * size[a]
                } else {
                    start
                };
            }
            added.push(p);
        }
    }
    let mut out = cloud.clone();
    let features = vec![0.0; added.len() * cloud.feature_count()];
    let labels = cloud.labels().map(|_| vec![IGNORE; added.len()]);
    out.extend(&added, &features, labels.as_deref())?;
    Ok(out)
}

/// Sorted cell coordinates of a `grid³` lattice over the bounding box that
/// hold at least one point. Points on the upper face fall in the last cell.
pub fn occupied_cells(cloud: &PointCloud, grid: usize) -> Vec<[usize; 3]> {
    let (lo, hi) = cloud.bounds();
    let cell_of = |p: &[f64; 3]| {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let extent = hi[a] - lo[a];
            if extent > 0.0 {
                c[a] = (((p[a] - lo[a]) / extent * grid as f64) as usize).min(grid - 1);
            }
        }
        c
    };
    let set: BTreeSet<[usize; 3]> = cloud.positions().iter().map(cell_of).collect();
    set.into_iter().collect()
}
