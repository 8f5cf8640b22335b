//! Exact k-nearest-neighbor search over a static point set.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{OdfError, Result};
use crate::geometry::{distance, Point3, PointCloud};
use crate::par;

const LEAF_SIZE: usize = 8;

/// Neighbors of one query, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Distance of the `n`-th neighbor (1-based), the cone height `d_n`.
    pub fn rank_distance(&self, n: usize) -> f64 {
        self.distances[n - 1]
    }
}

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

/// k-d tree over a cloud. Queries return exactly what an exhaustive scan
/// returns: neighbors ordered by (distance, index), the query itself excluded.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KnnIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        cloud.validate(2)?;
        let points = cloud.points.clone();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        build_node(&points, &mut order, 0, points.len(), &mut nodes);
        Ok(Self {
            points,
            order,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// The `k` nearest neighbors of point `query_index`, excluding itself.
    pub fn knn(&self, query_index: usize, k: usize) -> Result<NeighborList> {
        if query_index >= self.points.len() {
            return Err(OdfError::IndexOutOfRange {
                index: query_index,
                size: self.points.len(),
            });
        }
        if k >= self.points.len() {
            return Err(OdfError::KTooLarge {
                k,
                size: self.points.len(),
            });
        }
        Ok(self.search(&self.points[query_index], k, Some(query_index)))
    }

    /// The `k` nearest cloud points to an arbitrary location.
    pub fn knn_point(&self, query: &Point3, k: usize) -> Result<NeighborList> {
        if k > self.points.len() {
            return Err(OdfError::KTooLarge {
                k,
                size: self.points.len(),
            });
        }
        Ok(self.search(query, k, None))
    }

    /// Neighbor lists for every point, in point order.
    pub fn knn_all(&self, k: usize) -> Result<Vec<NeighborList>> {
        if k >= self.points.len() {
            return Err(OdfError::KTooLarge {
                k,
                size: self.points.len(),
            });
        }
        Ok(par::map_indexed(self.points.len(), |i| {
            self.search(&self.points[i], k, Some(i))
        }))
    }

    fn search(&self, query: &Point3, k: usize, exclude: Option<usize>) -> NeighborList {
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.visit(0, query, k, exclude, &mut heap);
        }
        let sorted = heap.into_sorted_vec();
        NeighborList {
            indices: sorted.iter().map(|c| c.index).collect(),
            distances: sorted.iter().map(|c| c.dist).collect(),
        }
    }

    fn visit(
        &self,
        node: usize,
        query: &Point3,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    if Some(index) == exclude {
                        continue;
                    }
                    let cand = Candidate {
                        dist: distance(query, &self.points[index]),
                        index,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
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
                self.visit(near, query, k, exclude, heap);
                // Equal bound must still be visited: a tie may hold a lower index.
                let bound = diff.abs();
                if heap.len() < k || bound <= heap.peek().expect("heap is full").dist {
                    self.visit(far, query, k, exclude, heap);
                }
            }
        }
    }
}

fn build_node(
    points: &[Point3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let axis = widest_axis(points, slice);
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .total_cmp(&points[b][axis])
            .then(a.cmp(&b))
    });
    let value = points[slice[mid]][axis];
    nodes.push(Node::Leaf { start, end });
    // Left holds coordinates <= value, right holds >= value.
    let left = build_node(points, order, start, start + mid, nodes);
    let right = build_node(points, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

fn widest_axis(points: &[Point3], indices: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in indices {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: Vec<Point3>) -> PointCloud {
        PointCloud::new(points)
    }

    #[test]
    fn two_points() {
        let idx = KnnIndex::build(&cloud(vec![Point3::zeros(), Point3::new(1.0, 0.0, 0.0)])).unwrap();
        let n = idx.knn(0, 1).unwrap();
        assert_eq!(n.indices, vec![1]);
        assert_eq!(n.distances, vec![1.0]);
    }

    #[test]
    fn lattice_axis_neighbors() {
        let mut pts = Vec::new();
        for x in -1..=1 {
            for y in -1..=1 {
                for z in -1..=1 {
                    pts.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let center = pts.iter().position(|p| p.norm() == 0.0).unwrap();
        let idx = KnnIndex::build(&cloud(pts.clone())).unwrap();
        let n = idx.knn(center, 6).unwrap();
        assert!(n.distances.iter().all(|&d| d == 1.0));
        let mut got: Vec<_> = n.indices.iter().map(|&i| pts[i]).collect();
        got.sort_by(|a, b| a.as_slice().partial_cmp(b.as_slice()).unwrap());
        let mut want = vec![
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, -1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, -1.0),
            Point3::new(0.0, 0.0, 1.0),
        ];
        want.sort_by(|a, b| a.as_slice().partial_cmp(b.as_slice()).unwrap());
        assert_eq!(got, want);
        // Ties at equal distance come out in index order.
        assert!(n.indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn collinear_distances() {
        let pts = (0..9).map(|i| Point3::new(0.0, 0.0, i as f64 * 0.1)).collect();
        let idx = KnnIndex::build(&cloud(pts)).unwrap();
        let n = idx.knn(0, 3).unwrap();
        assert_eq!(n.indices, vec![1, 2, 3]);
        for (d, want) in n.distances.iter().zip([0.1, 0.2, 0.3]) {
            assert!((d - want).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicates_first_by_index() {
        let pts = vec![
            Point3::zeros(),
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(0.5, 0.0, 0.0),
            Point3::new(0.5, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
        ];
        let idx = KnnIndex::build(&cloud(pts)).unwrap();
        let n = idx.knn(0, 3).unwrap();
        assert_eq!(n.indices, vec![2, 3, 4]);
    }

    #[test]
    fn errors() {
        let idx = KnnIndex::build(&cloud(vec![Point3::zeros(), Point3::new(1.0, 0.0, 0.0)])).unwrap();
        assert!(matches!(idx.knn(0, 2), Err(OdfError::KTooLarge { .. })));
        assert!(matches!(idx.knn(5, 1), Err(OdfError::IndexOutOfRange { .. })));
        assert!(KnnIndex::build(&cloud(vec![Point3::zeros()])).is_err());
    }
}
