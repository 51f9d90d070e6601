//! Exact k-d tree over fixed-width rows of any dimension.
//!
//! Neighbor order is `(squared distance, index)` lexicographic, so results
//! are bit-identical to a brute-force scan with lowest-index tie breaking.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    data: Vec<f64>,
    order: Vec<usize>,
    root: Node,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Squared Euclidean distance, summed in coordinate order.
#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

impl KdTree {
    /// Builds a tree over `rows`, each of width `dim`.
    pub fn new<R: AsRef<[f64]>>(rows: &[R], dim: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), dim, "kd-tree row width mismatch");
            data.extend_from_slice(r);
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let root = Self::build(&data, dim, &mut order, 0, rows.len());
        Self {
            dim,
            data,
            order,
            root,
        }
    }

    pub fn from_points(points: &[crate::geometry::Vec3]) -> Self {
        let rows: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self::new(&rows, 3)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn build(data: &[f64], dim: usize, order: &mut [usize], start: usize, end: usize) -> Node {
        if end - start <= LEAF_SIZE {
            return Node::Leaf { start, end };
        }
        let slice = &mut order[start..end];
        let mut best_dim = 0;
        let mut best_spread = -1.0;
        for d in 0..dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in slice.iter() {
                let v = data[i * dim + d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        if best_spread <= 0.0 {
            return Node::Leaf { start, end };
        }
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            data[a * dim + best_dim].total_cmp(&data[b * dim + best_dim])
        });
        let value = data[slice[mid] * dim + best_dim];
        let left = Self::build(data, dim, order, start, start + mid);
        let right = Self::build(data, dim, order, start + mid, end);
        Node::Split {
            dim: best_dim,
            value,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// The `k` nearest rows to `query` as `(index, distance)`, closest first.
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        assert_eq!(query.len(), self.dim, "kd-tree query width mismatch");
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(&self.root, query, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect()
    }

    fn knn_rec(&self, node: &Node, q: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let c = Candidate {
                        dist2: dist2(q, self.row(i)),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("non-empty heap") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_rec(near, q, k, heap);
                // Equal-distance candidates may still win on index, so prune strictly.
                if heap.len() < k || diff * diff <= heap.peek().expect("non-empty heap").dist2 {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    pub fn nearest(&self, query: &[f64]) -> Option<(usize, f64)> {
        self.knn(query, 1).into_iter().next()
    }

    /// Indices of all rows with `|row - query| <= radius`, ascending.
    pub fn within_radius(&self, query: &[f64], radius: f64) -> Vec<usize> {
        assert_eq!(query.len(), self.dim, "kd-tree query width mismatch");
        let mut out = Vec::new();
        let r2 = radius * radius;
        self.radius_rec(&self.root, query, r2, &mut out);
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, node: &Node, q: &[f64], r2: f64, out: &mut Vec<usize>) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    if dist2(q, self.row(i)) <= r2 {
                        out.push(i);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[*dim] - value;
                if diff < 0.0 {
                    self.radius_rec(left, q, r2, out);
                    if diff * diff <= r2 {
                        self.radius_rec(right, q, r2, out);
                    }
                } else {
                    self.radius_rec(right, q, r2, out);
                    if diff * diff <= r2 {
                        self.radius_rec(left, q, r2, out);
                    }
                }
            }
        }
    }
}

/// Brute-force `k` nearest neighbors with the same ordering as [`KdTree::knn`].
pub fn brute_force_knn<R: AsRef<[f64]>>(rows: &[R], query: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<Candidate> = rows
        .iter()
        .enumerate()
        .map(|(index, r)| Candidate {
            dist2: dist2(query, r.as_ref()),
            index,
        })
        .collect();
    all.sort();
    all.truncate(k);
    all.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect()
}
