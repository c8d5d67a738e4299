//! Exact k-nearest-neighbor queries over a fixed reference cloud.
//!
//! The index is a k-d tree that returns exactly the same results as a linear
//! scan: neighbors sorted by ascending Euclidean distance, ties broken by the
//! lower point id. Pruning compares squared distances and never discards a
//! subtree that could contain an equal-distance candidate, so tie handling is
//! not affected by the traversal order.

use crate::error::{Error, Result};
use crate::pointcloud::{dist_sq, PointCloud};

const LEAF_SIZE: usize = 12;

/// One neighbor-query result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Id of the point in the reference cloud.
    pub id: usize,
    /// Euclidean (non-squared) distance to the query.
    pub dist: f64,
}

enum Node {
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        start: usize,
        end: usize,
    },
}

/// Spatial index over a reference cloud.
pub struct NeighborIndex {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: usize,
}

impl NeighborIndex {
    /// Build an index over a slice of points.
    pub fn from_points(points: &[[f64; 3]]) -> Result<NeighborIndex> {
        if points.is_empty() {
            return Err(Error::InvalidInput(
                "neighbor index needs at least one point".into(),
            ));
        }
        let mut index = NeighborIndex {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        index.root = index.build(0, points.len());
        Ok(index)
    }

    /// Build an index over a cloud.
    pub fn new(cloud: &PointCloud) -> Result<NeighborIndex> {
        NeighborIndex::from_points(cloud.points())
    }

    /// Number of indexed points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false: construction rejects empty inputs.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        let slice = &mut self.order[start..end];
        let mut lo = self.points[slice[0] as usize];
        let mut hi = lo;
        for &i in slice.iter() {
            let p = self.points[i as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let mut axis = 0;
        for a in 1..3 {
            if hi[a] - lo[a] > hi[axis] - lo[axis] {
                axis = a;
            }
        }
        if hi[axis] - lo[axis] == 0.0 {
            // All points coincide; a leaf avoids an unsplittable recursion.
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        let mid = (end - start) / 2;
        let points = &self.points;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            points[a as usize][axis]
                .total_cmp(&points[b as usize][axis])
                .then(a.cmp(&b))
        });
        let value = self.points[slice[mid] as usize][axis];
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        self.nodes.push(Node::Split {
            axis,
            value,
            left,
            right,
        });
        self.nodes.len() - 1
    }

    /// The `k` nearest reference points to `query`, sorted by ascending
    /// distance with ties broken by lower point id.
    ///
    /// When the query is itself a member of the reference cloud, pass its id
    /// as `exclude` to drop the self match; pass `None` to keep it.
    pub fn knn(&self, query: [f64; 3], k: usize, exclude: Option<usize>) -> Result<Vec<Neighbor>> {
        let available = self.points.len() - usize::from(exclude.is_some());
        if k == 0 || k > available {
            return Err(Error::KOutOfRange { k, available });
        }
        let mut heap: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search(self.root, query, k, exclude, &mut heap);
        let mut out: Vec<(f64, u32)> = heap;
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(out
            .into_iter()
            .map(|(sq, id)| Neighbor {
                id: id as usize,
                dist: sq.sqrt(),
            })
            .collect())
    }

    /// Id and squared distance of the nearest reference point.
    pub fn nearest_sq(&self, query: [f64; 3], exclude: Option<usize>) -> (usize, f64) {
        let mut best_sq = f64::INFINITY;
        let mut best_id = u32::MAX;
        self.search_one(self.root, query, exclude, &mut best_sq, &mut best_id);
        (best_id as usize, best_sq)
    }

    fn search(
        &self,
        node: usize,
        query: [f64; 3],
        k: usize,
        exclude: Option<usize>,
        heap: &mut Vec<(f64, u32)>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    if exclude == Some(id as usize) {
                        continue;
                    }
                    let sq = dist_sq(query, self.points[id as usize]);
                    if heap.len() < k {
                        heap.push((sq, id));
                        if heap.len() == k {
                            heap.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
                        }
                    } else {
                        let worst = heap[0];
                        if sq < worst.0 || (sq == worst.0 && id < worst.1) {
                            heap[0] = (sq, id);
                            // Restore "worst first" by a single pass; k is small.
                            let mut i = 0;
                            while i + 1 < heap.len()
                                && (heap[i].0 < heap[i + 1].0
                                    || (heap[i].0 == heap[i + 1].0 && heap[i].1 < heap[i + 1].1))
                            {
                                heap.swap(i, i + 1);
                                i += 1;
                            }
                        }
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, exclude, heap);
                // Equal plane distance may still hide an equal-distance point
                // with a lower id, so only strictly farther planes are pruned.
                if heap.len() < k || diff * diff <= heap[0].0 {
                    self.search(far, query, k, exclude, heap);
                }
            }
        }
    }

    fn search_one(
        &self,
        node: usize,
        query: [f64; 3],
        exclude: Option<usize>,
        best_sq: &mut f64,
        best_id: &mut u32,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    if exclude == Some(id as usize) {
                        continue;
                    }
                    let sq = dist_sq(query, self.points[id as usize]);
                    if sq < *best_sq || (sq == *best_sq && id < *best_id) {
                        *best_sq = sq;
                        *best_id = id;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search_one(near, query, exclude, best_sq, best_id);
                if diff * diff <= *best_sq {
                    self.search_one(far, query, exclude, best_sq, best_id);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::brute::knn_brute;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn collinear_index() -> NeighborIndex {
        NeighborIndex::from_points(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap()
    }

    #[test]
    fn knn_on_collinear_points_excluding_self() {
        let index = collinear_index();
        let result = index.knn([0.0, 0.0, 0.0], 2, Some(0)).unwrap();
        assert_eq!(result[0].id, 1);
        assert_abs_diff_eq!(result[0].dist, 1.0);
        assert_eq!(result[1].id, 2);
        assert_abs_diff_eq!(result[1].dist, 2.0);
    }

    #[test]
    fn knn_keeps_self_match_when_not_excluded() {
        let index = collinear_index();
        let result = index.knn([0.0, 0.0, 0.0], 1, None).unwrap();
        assert_eq!(result[0].id, 0);
        assert_abs_diff_eq!(result[0].dist, 0.0);
    }

    #[test]
    fn knn_breaks_distance_ties_by_lower_id() {
        let index = NeighborIndex::from_points(&[
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
        ])
        .unwrap();
        let result = index.knn([0.0, 0.0, 0.0], 3, None).unwrap();
        assert_eq!(
            result.iter().map(|n| n.id).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        let index = collinear_index();
        assert!(matches!(
            index.knn([0.0; 3], 0, None),
            Err(crate::Error::KOutOfRange { .. })
        ));
        assert!(index.knn([0.0; 3], 3, None).is_ok());
        assert!(matches!(
            index.knn([0.0; 3], 3, Some(1)),
            Err(crate::Error::KOutOfRange { k: 3, available: 2 })
        ));
        assert!(matches!(
            index.knn([0.0; 3], 4, None),
            Err(crate::Error::KOutOfRange { k: 4, available: 3 })
        ));
    }

    #[test]
    fn knn_matches_brute_force_on_randomized_trials() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        for trial in 0..1000 {
            let n = rng.gen_range(2..=64);
            let points: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect();
            let index = NeighborIndex::from_points(&points).unwrap();
            let query = if trial % 3 == 0 {
                points[rng.gen_range(0..n)]
            } else {
                [
                    rng.gen_range(-1.2..1.2),
                    rng.gen_range(-1.2..1.2),
                    rng.gen_range(-1.2..1.2),
                ]
            };
            let exclude = if trial % 4 == 0 {
                Some(rng.gen_range(0..n))
            } else {
                None
            };
            let available = n - usize::from(exclude.is_some());
            let k = rng.gen_range(1..=available.min(8));
            let fast = index.knn(query, k, exclude).unwrap();
            let brute = knn_brute(&points, query, k, exclude).unwrap();
            assert_eq!(fast.len(), brute.len());
            for (a, b) in fast.iter().zip(brute.iter()) {
                assert_eq!(a.id, b.id, "trial {trial}");
                assert_eq!(a.dist.to_bits(), b.dist.to_bits(), "trial {trial}");
            }
        }
    }

    #[test]
    fn knn_with_512_reference_points_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let points: Vec<[f64; 3]> = (0..512)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();
        let index = NeighborIndex::from_points(&points).unwrap();
        for _ in 0..100 {
            let query = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let fast = index.knn(query, 5, None).unwrap();
            let brute = knn_brute(&points, query, 5, None).unwrap();
            for (a, b) in fast.iter().zip(brute.iter()) {
                assert_eq!(a.id, b.id);
                assert_eq!(a.dist.to_bits(), b.dist.to_bits());
            }
        }
    }

    #[test]
    fn knn_results_are_permutation_consistent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let points: Vec<[f64; 3]> = (0..40)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();
        let mut permuted: Vec<(usize, [f64; 3])> = points.iter().copied().enumerate().collect();
        permuted.reverse();
        let remap: Vec<usize> = permuted.iter().map(|(orig, _)| *orig).collect();
        let shuffled: Vec<[f64; 3]> = permuted.iter().map(|(_, p)| *p).collect();

        let base = NeighborIndex::from_points(&points).unwrap();
        let other = NeighborIndex::from_points(&shuffled).unwrap();
        for _ in 0..50 {
            let query = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let a = base.knn(query, 4, None).unwrap();
            let b = other.knn(query, 4, None).unwrap();
            for (na, nb) in a.iter().zip(b.iter()) {
                assert_eq!(na.dist.to_bits(), nb.dist.to_bits());
                // The selected neighbors are the same points up to the
                // permutation, except on exact distance ties where the id
                // rule may pick an equally distant twin.
                let orig = remap[nb.id];
                assert_eq!(
                    dist_sq(query, points[na.id]).to_bits(),
                    dist_sq(query, points[orig]).to_bits()
                );
            }
        }
    }
}
