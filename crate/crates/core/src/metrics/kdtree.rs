//! Exact kd-tree over a fixed point set.
//!
//! All distances are squared Euclidean computed by [`linalg::sq_dist`], the
//! same routine the exhaustive path uses, so both paths agree bit for bit.
//! Pruning only discards subtrees whose splitting-plane distance strictly
//! exceeds the current bound; ties are still explored.

use std::collections::BinaryHeap;

use crate::linalg;

const LEAF_SIZE: usize = 8;

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

pub struct KdTree<'a> {
    points: Vec<&'a [f64]>,
    /// Permutation of point indices; leaves own contiguous ranges.
    order: Vec<usize>,
    root: Node,
}

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(points: Vec<&'a [f64]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let n = order.len();
        let root = build(&points, &mut order, 0, n);
        Self {
            points,
            order,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Squared distance to the `k`-th nearest point, skipping index `exclude`.
    /// `None` when fewer than `k` candidates exist.
    pub fn kth_sq_dist(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Option<f64> {
        if k == 0 {
            return Some(0.0);
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(&self.root, query, k, exclude, &mut heap);
        if heap.len() < k {
            None
        } else {
            heap.peek().map(|c| c.0)
        }
    }

    fn knn_rec(
        &self,
        node: &Node,
        query: &[f64],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let d = linalg::sq_dist(self.points[i], query);
                    if heap.len() < k {
                        heap.push(Candidate(d, i));
                    } else if d < heap.peek().expect("heap full").0 {
                        heap.pop();
                        heap.push(Candidate(d, i));
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[*dim] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_rec(near, query, k, exclude, heap);
                if heap.len() < k || diff * diff <= heap.peek().expect("heap full").0 {
                    self.knn_rec(far, query, k, exclude, heap);
                }
            }
        }
    }

    /// Nearest point and its squared distance; ties go to the lowest index.
    pub fn nearest(&self, query: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.nearest_rec(&self.root, query, &mut best);
        best
    }

    fn nearest_rec(&self, node: &Node, query: &[f64], best: &mut Option<(usize, f64)>) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d = linalg::sq_dist(self.points[i], query);
                    let better = match *best {
                        None => true,
                        Some((bi, bd)) => d < bd || (d == bd && i < bi),
                    };
                    if better {
                        *best = Some((i, d));
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[*dim] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.nearest_rec(near, query, best);
                if best.map_or(true, |(_, bd)| diff * diff <= bd) {
                    self.nearest_rec(far, query, best);
                }
            }
        }
    }

    /// Whether some point lies within squared distance `r_sq` (inclusive).
    pub fn any_within(&self, query: &[f64], r_sq: f64) -> bool {
        self.any_rec(&self.root, query, r_sq)
    }

    fn any_rec(&self, node: &Node, query: &[f64], r_sq: f64) -> bool {
        match node {
            Node::Leaf { start, end } => self.order[*start..*end]
                .iter()
                .any(|&i| linalg::sq_dist(self.points[i], query) <= r_sq),
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[*dim] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.any_rec(near, query, r_sq)
                    || (diff * diff <= r_sq && self.any_rec(far, query, r_sq))
            }
        }
    }
}

fn build(points: &[&[f64]], order: &mut [usize], start: usize, end: usize) -> Node {
    if end - start <= LEAF_SIZE {
        return Node::Leaf { start, end };
    }
    let dims = points[order[start]].len();
    // split on the widest dimension at the median
    let mut best_dim = 0;
    let mut best_spread = f64::NEG_INFINITY;
    for dim in 0..dims {
        let (lo, hi) = order[start..end]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(points[i][dim]), hi.max(points[i][dim]))
            });
        if hi - lo > best_spread {
            best_spread = hi - lo;
            best_dim = dim;
        }
    }
    if best_spread <= 0.0 {
        return Node::Leaf { start, end };
    }
    let slice = &mut order[start..end];
    slice.sort_by(|&a, &b| {
        points[a][best_dim]
            .total_cmp(&points[b][best_dim])
            .then(a.cmp(&b))
    });
    let mid = slice.len() / 2;
    let value = points[slice[mid - 1]][best_dim];
    // left holds coordinates <= value, right the rest
    let split = slice.partition_point(|&i| points[i][best_dim] <= value);
    if split == 0 || split == slice.len() {
        return Node::Leaf { start, end };
    }
    let left = build(points, order, start, start + split);
    let right = build(points, order, start + split, end);
    Node::Split {
        dim: best_dim,
        value,
        left: Box::new(left),
        right: Box::new(right),
    }
}
