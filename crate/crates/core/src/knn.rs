//! Exact k-nearest-neighbor queries over a static point set.
//!
//! Neighbors are ordered by `(squared distance, index)`, so results match a
//! brute-force sort with ties broken by ascending index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Point3;

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree index over a cloud's points.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    points: Vec<Point3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// A neighbor hit: point index and squared distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

impl KnnIndex {
    pub fn new(points: &[Point3<f64>]) -> Self {
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // Split on the axis of largest extent.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query`, ascending by distance then index.
    pub fn knn(&self, query: &Point3<f64>, k: usize) -> Result<Vec<usize>> {
        Ok(self
            .knn_with_distances(query, k, None)?
            .into_iter()
            .map(|n| n.index)
            .collect())
    }

    /// Like [`knn`](Self::knn) for the indexed point `index`, excluding the
    /// point itself.
    pub fn knn_of(&self, index: usize, k: usize) -> Result<Vec<usize>> {
        Ok(self
            .knn_with_distances(&self.points[index], k, Some(index))?
            .into_iter()
            .map(|n| n.index)
            .collect())
    }

    pub fn knn_with_distances(
        &self,
        query: &Point3<f64>,
        k: usize,
        exclude: Option<usize>,
    ) -> Result<Vec<Neighbor>> {
        let available = self.len() - usize::from(exclude.is_some_and(|e| e < self.len()));
        if k > available {
            return Err(Error::KTooLarge {
                requested: k,
                available,
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, exclude, &mut heap);
        Ok(heap.into_sorted_vec())
    }

    /// Nearest indexed point to `query` (lowest index on ties).
    pub fn nearest(&self, query: &Point3<f64>) -> Option<Neighbor> {
        if self.is_empty() {
            return None;
        }
        let mut heap = BinaryHeap::with_capacity(2);
        self.search(0, query, 1, None, &mut heap);
        heap.pop()
    }

    fn search(
        &self,
        node: usize,
        query: &Point3<f64>,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = Neighbor {
                        index: i,
                        dist_sq: (self.points[i] - query).norm_squared(),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
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
                // Equal distance to the plane may still hold a tie with a lower
                // index, so only prune strictly.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist_sq {
                    self.search(far, query, k, exclude, heap);
                }
            }
        }
    }
}

/// Reference brute-force kNN used by tests and as a fallback oracle.
pub fn brute_force_knn(
    points: &[Point3<f64>],
    query: &Point3<f64>,
    k: usize,
    exclude: Option<usize>,
) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, p)| ((p - query).norm_squared(), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(coords: &[[f64; 3]]) -> Vec<Point3<f64>> {
        coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect()
    }

    #[test]
    fn nearest_by_inspection() {
        let p = pts(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let idx = KnnIndex::new(&p);
        assert_eq!(idx.knn_of(0, 1).unwrap(), vec![1]);
        assert_eq!(idx.knn_of(0, 2).unwrap(), vec![1, 2]);
        assert_eq!(idx.knn(&p[0], 1).unwrap(), vec![0]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let p = pts(&[[0.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let idx = KnnIndex::new(&p);
        assert_eq!(idx.knn_of(0, 2).unwrap(), vec![1, 2]);
        let p = pts(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        assert_eq!(KnnIndex::new(&p).knn_of(0, 1).unwrap(), vec![1]);
    }

    #[test]
    fn too_many_neighbors_is_an_error() {
        let p = pts(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let idx = KnnIndex::new(&p);
        assert!(matches!(idx.knn_of(0, 2), Err(Error::KTooLarge { .. })));
        assert!(matches!(idx.knn(&p[0], 3), Err(Error::KTooLarge { .. })));
        assert_eq!(idx.knn(&p[0], 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let n = rng.random_range(1..=500);
            let p: Vec<Point3<f64>> = (0..n)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let idx = KnnIndex::new(&p);
            for q in 0..n.min(25) {
                let k = rng.random_range(0..n);
                assert_eq!(
                    idx.knn_of(q, k).unwrap(),
                    brute_force_knn(&p, &p[q], k, Some(q)),
                    "trial {trial}, query {q}"
                );
            }
        }
    }

    #[test]
    fn matches_brute_force_on_grid_with_many_ties() {
        let mut p = Vec::new();
        for x in 0..8 {
            for y in 0..8 {
                for z in 0..3 {
                    p.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let idx = KnnIndex::new(&p);
        for q in 0..p.len() {
            assert_eq!(idx.knn_of(q, 10).unwrap(), brute_force_knn(&p, &p[q], 10, Some(q)));
        }
    }

    proptest! {
        #[test]
        fn knn_equals_brute_force(
            coords in prop::collection::vec((-2i8..3, -2i8..3, -2i8..3), 1..120),
            q in (-3i8..4, -3i8..4, -3i8..4),
            k in 0usize..20,
        ) {
            // Coarse integer lattice forces many exact ties.
            let p: Vec<Point3<f64>> = coords
                .iter()
                .map(|&(x, y, z)| Point3::new(x as f64, y as f64, z as f64 * 0.5))
                .collect();
            let k = k.min(p.len());
            let query = Point3::new(q.0 as f64, q.1 as f64, q.2 as f64);
            let idx = KnnIndex::new(&p);
            prop_assert_eq!(idx.knn(&query, k).unwrap(), brute_force_knn(&p, &query, k, None));
        }
    }
}
