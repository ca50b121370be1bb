//! Exact k-nearest-neighbour search.
//!
//! Small inputs use an all-pairs scan; larger ones bucket points into a uniform
//! voxel grid and visit shells of voxels until the k-th candidate is provably
//! closer than anything unvisited. Both paths order candidates by
//! `(squared distance, index)`, so results are identical.

use std::collections::{BinaryHeap, HashMap};

use super::dist2;
use crate::{Error, Result};

const BRUTE_FORCE_LIMIT: usize = 256;

/// Row-major `N × k` neighbour table; row `i` lists the `k` nearest other
/// points of point `i`, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    indices: Vec<u32>,
    k: usize,
}

impl NeighborIndex {
    pub fn from_rows(indices: Vec<u32>, k: usize) -> Result<Self> {
        if k == 0 || !indices.len().is_multiple_of(k) {
            return Err(Error::Shape(format!(
                "{} entries do not form rows of {k}",
                indices.len()
            )));
        }
        let n = indices.len() / k;
        if indices.iter().any(|&j| j as usize >= n) {
            return Err(Error::Shape("neighbour index out of range".into()));
        }
        Ok(Self { indices, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.indices
    }

    /// Re-express the table for the point order `perm`, where new point `i` is
    /// old point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> NeighborIndex {
        let mut inverse = vec![0u32; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new as u32;
        }
        let mut indices = Vec::with_capacity(self.indices.len());
        for &old in perm {
            indices.extend(self.row(old).iter().map(|&j| inverse[j as usize]));
        }
        NeighborIndex { indices, k: self.k }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    idx: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

pub fn knn(positions: &[[f64; 3]], k: usize) -> Result<NeighborIndex> {
    let n = positions.len();
    if k == 0 || k >= n {
        return Err(Error::NeighborCount { k, n });
    }
    let indices = if n <= BRUTE_FORCE_LIMIT {
        brute_force(positions, k)
    } else {
        grid_search(positions, k)
    };
    Ok(NeighborIndex { indices, k })
}

fn brute_force(positions: &[[f64; 3]], k: usize) -> Vec<u32> {
    let n = positions.len();
    let mut out = Vec::with_capacity(n * k);
    let mut cands = Vec::with_capacity(n);
    for (i, p) in positions.iter().enumerate() {
        cands.clear();
        cands.extend(
            positions
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| Candidate {
                    d2: dist2(p, q),
                    idx: j as u32,
                }),
        );
        cands.select_nth_unstable(k - 1);
        let row = &mut cands[..k];
        row.sort_unstable();
        out.extend(row.iter().map(|c| c.idx));
    }
    out
}

fn grid_search(positions: &[[f64; 3]], k: usize) -> Vec<u32> {
    let n = positions.len();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in positions {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    // size voxels from the horizontal footprint; LiDAR scenes are close to 2.5D
    let ext: Vec<f64> = (0..3).map(|a| hi[a] - lo[a]).collect();
    let area = (ext[0] * ext[1]).max(ext[0] * ext[2]).max(ext[1] * ext[2]);
    let mut cell = (area * (k + 1) as f64 / n as f64).sqrt();
    if !(cell > 0.0 && cell.is_finite()) {
        cell = ext.iter().cloned().fold(0.0, f64::max).max(1e-9) / 4.0;
    }
    let key = |p: &[f64; 3]| -> [i64; 3] {
        [
            ((p[0] - lo[0]) / cell).floor() as i64,
            ((p[1] - lo[1]) / cell).floor() as i64,
            ((p[2] - lo[2]) / cell).floor() as i64,
        ]
    };
    let mut buckets: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    let mut span = 0i64;
    for (i, p) in positions.iter().enumerate() {
        let c = key(p);
        span = span.max(c[0]).max(c[1]).max(c[2]);
        buckets.entry(c).or_default().push(i as u32);
    }

    let mut out = Vec::with_capacity(n * k);
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    for (i, p) in positions.iter().enumerate() {
        heap.clear();
        let c = key(p);
        let mut r = 0i64;
        loop {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let Some(bucket) = buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                            continue;
                        };
                        for &j in bucket {
                            if j as usize == i {
                                continue;
                            }
                            let cand = Candidate {
                                d2: dist2(p, &positions[j as usize]),
                                idx: j,
                            };
                            if heap.len() < k {
                                heap.push(cand);
                            } else if cand < *heap.peek().expect("heap is full") {
                                heap.pop();
                                heap.push(cand);
                            }
                        }
                    }
                }
            }
            // every unvisited point is at least r * cell away
            let bound = r as f64 * cell;
            if heap.len() == k && heap.peek().expect("heap is full").d2 < bound * bound {
                break;
            }
            if r > span + 1 {
                break;
            }
            r += 1;
        }
        let row = heap.clone().into_sorted_vec();
        out.extend(row.iter().map(|c| c.idx));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    /// Independent oracle: full sort of all other points.
    fn oracle(positions: &[[f64; 3]], k: usize) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, p) in positions.iter().enumerate() {
            let mut all: Vec<(f64, usize)> = positions
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| {
                    (
                        (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2),
                        j,
                    )
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            out.extend(all[..k].iter().map(|&(_, j)| j as u32));
        }
        out
    }

    #[test]
    fn collinear_ties_go_to_lower_index() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let nn = knn(&pts, 1).unwrap();
        assert_eq!(nn.as_slice(), &[1, 0, 1]);
    }

    #[test]
    fn k_equal_n_minus_one_lists_everyone_else() {
        let pts = [[0.0; 3], [5.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let nn = knn(&pts, 3).unwrap();
        for i in 0..4 {
            let mut row: Vec<u32> = nn.row(i).to_vec();
            row.sort_unstable();
            let expect: Vec<u32> = (0..4).filter(|&j| j != i as u32).collect();
            assert_eq!(row, expect);
        }
    }

    #[test]
    fn k_too_large() {
        assert!(matches!(
            knn(&[[0.0; 3], [1.0; 3]], 2),
            Err(Error::NeighborCount { k: 2, n: 2 })
        ));
    }

    #[test]
    fn random_fifty_points_match_oracle() {
        let mut rng = seeded(50);
        let pts: Vec<[f64; 3]> = (0..50)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        assert_eq!(knn(&pts, 5).unwrap().as_slice(), oracle(&pts, 5).as_slice());
    }

    #[test]
    fn grid_path_matches_oracle_with_duplicates_and_lattice_ties() {
        let mut pts = Vec::new();
        for x in 0..12 {
            for y in 0..12 {
                for z in 0..3 {
                    pts.push([x as f64 * 0.5, y as f64 * 0.5, z as f64 * 0.5]);
                }
            }
        }
        pts.extend_from_within(..40);
        assert!(pts.len() > BRUTE_FORCE_LIMIT);
        assert_eq!(grid_search(&pts, 16), oracle(&pts, 16));
    }

    #[test]
    fn grid_path_matches_oracle_on_planar_scene() {
        let mut rng = seeded(3);
        let pts: Vec<[f64; 3]> = (0..1500)
            .map(|_| {
                [
                    rng.random_range(0.0..20.0),
                    rng.random_range(0.0..20.0),
                    0.0,
                ]
            })
            .collect();
        assert_eq!(grid_search(&pts, 16), oracle(&pts, 16));
    }

    #[test]
    fn permuted_table_matches_recomputed() {
        let mut rng = seeded(9);
        let pts: Vec<[f64; 3]> = (0..40)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let perm: Vec<usize> = (0..40).rev().collect();
        let moved: Vec<[f64; 3]> = perm.iter().map(|&i| pts[i]).collect();
        let a = knn(&pts, 4).unwrap().permuted(&perm);
        let b = knn(&moved, 4).unwrap();
        assert_eq!(a, b);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn matches_brute_force_oracle(seed in 0u64..10_000, n in 2usize..=200, k in 1usize..20) {
            let k = k.min(n - 1);
            let mut rng = seeded(seed);
            let pts: Vec<[f64; 3]> = (0..n)
                .map(|_| [rng.random_range(0.0..4.0), rng.random_range(0.0..4.0), rng.random_range(0.0..0.5)])
                .collect();
            let expect = oracle(&pts, k);
            let got = knn(&pts, k).unwrap();
            proptest::prop_assert_eq!(got.as_slice(), &expect[..]);
            proptest::prop_assert_eq!(grid_search(&pts, k), expect);
        }
    }
}
