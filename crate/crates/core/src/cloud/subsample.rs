use std::collections::BTreeMap;

use super::{dist2, PointCloud};
use crate::{Error, Result};

fn cell_of(p: &[f64; 3], cell: f64) -> [i64; 3] {
    [
        (p[0] / cell).floor() as i64,
        (p[1] / cell).floor() as i64,
        (p[2] / cell).floor() as i64,
    ]
}

/// Keep one point per occupied voxel of side `cell`.
///
/// Voxels are aligned to integer multiples of `cell`. Within a voxel the kept
/// point is the member closest to the members' centroid, ties going to the
/// lowest index. Output preserves the input order of the kept points.
pub fn grid_subsample(cloud: &PointCloud, cell: f64) -> Result<PointCloud> {
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(Error::Validation(format!(
            "grid cell must be positive, got {cell}"
        )));
    }
    let mut members: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.positions().iter().enumerate() {
        members.entry(cell_of(p, cell)).or_default().push(i);
    }
    let pos = cloud.positions();
    let mut kept: Vec<usize> = members
        .values()
        .map(|idx| {
            let inv = 1.0 / idx.len() as f64;
            let mut c = [0.0; 3];
            for &i in idx {
                for a in 0..3 {
                    c[a] += pos[i][a];
                }
            }
            c.iter_mut().for_each(|v| *v *= inv);
            // members are in increasing index order, so strict `<` keeps the lowest index on ties
            let mut best = idx[0];
            let mut best_d = dist2(&pos[best], &c);
            for &i in &idx[1..] {
                let d = dist2(&pos[i], &c);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    kept.sort_unstable();
    cloud.select(&kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use std::collections::HashSet;

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        let n = points.len();
        PointCloud::new(
            points,
            vec![0.0; n],
            1,
            Some((0..n).map(|i| (i % 2) as u8).collect()),
            2,
        )
        .unwrap()
    }

    #[test]
    fn same_cell_merges() {
        let c = cloud(vec![[0.0; 3], [0.1, 0.0, 0.0]]);
        assert_eq!(grid_subsample(&c, 0.25).unwrap().len(), 1);
    }

    #[test]
    fn distinct_cells_stay() {
        let c = cloud(vec![[0.0; 3], [0.3, 0.0, 0.0]]);
        assert_eq!(grid_subsample(&c, 0.25).unwrap().len(), 2);
    }

    #[test]
    fn unit_cube_collapses_to_one() {
        let mut rng = seeded(1);
        let pts = (0..1000)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        assert_eq!(grid_subsample(&cloud(pts), 10.0).unwrap().len(), 1);
    }

    #[test]
    fn keeps_point_nearest_centroid_with_its_label() {
        // centroid of the three is (0.1, 0, 0); index 1 sits exactly on it
        let c = cloud(vec![[0.0; 3], [0.1, 0.0, 0.0], [0.2, 0.0, 0.0]]);
        let s = grid_subsample(&c, 1.0).unwrap();
        assert_eq!(s.positions(), &[[0.1, 0.0, 0.0]]);
        assert_eq!(s.labels(), Some(&[1u8][..]));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let c = cloud(vec![[0.2, 0.0, 0.0], [0.0; 3]]);
        let s = grid_subsample(&c, 1.0).unwrap();
        assert_eq!(s.positions(), &[[0.2, 0.0, 0.0]]);
    }

    #[test]
    fn rejects_non_positive_cell() {
        assert!(grid_subsample(&cloud(vec![[0.0; 3]]), 0.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn distinct_cells_and_idempotent(seed in 0u64..500, cell in 0.05f64..2.0) {
            let mut rng = seeded(seed);
            let pts: Vec<[f64; 3]> = (0..200)
                .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..1.0)])
                .collect();
            let once = grid_subsample(&cloud(pts), cell).unwrap();
            let cells: HashSet<_> = once.positions().iter().map(|p| cell_of(p, cell)).collect();
            proptest::prop_assert_eq!(cells.len(), once.len());
            let twice = grid_subsample(&once, cell).unwrap();
            proptest::prop_assert_eq!(once, twice);
        }
    }
}
