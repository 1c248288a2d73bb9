use serde::{Deserialize, Serialize};

const LEAF_SIZE: usize = 16;

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Exact k-nearest-neighbour index under Euclidean distance.
///
/// Neighbours are ordered by `(squared distance, original row index)`, so
/// equidistant points resolve to the smallest row index.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KdTree {
    dim: usize,
    len: usize,
    points: Vec<f64>,
    index: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
fn before(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl KdTree {
    /// `points` is an `n x dim` row-major buffer. With `dim == 0`, `n` is taken
    /// from `len` and every query is equidistant from every point.
    pub fn build(points: &[f64], dim: usize, len: usize) -> Self {
        debug_assert_eq!(points.len(), dim * len);
        let mut order: Vec<usize> = (0..len).collect();
        let mut nodes = Vec::new();
        if dim == 0 {
            nodes.push(Node::Leaf { start: 0, end: len });
        } else {
            Self::build_node(points, dim, &mut order, 0, &mut nodes);
        }
        let mut permuted = Vec::with_capacity(points.len());
        for &i in &order {
            permuted.extend_from_slice(&points[i * dim..(i + 1) * dim]);
        }
        Self { dim, len, points: permuted, index: order, nodes }
    }

    fn build_node(points: &[f64], dim: usize, order: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> usize {
        let id = nodes.len();
        let n = order.len();
        nodes.push(Node::Leaf { start: offset, end: offset + n });
        if n <= LEAF_SIZE {
            return id;
        }
        let mut best = (0, 0.0);
        for k in 0..dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in order.iter() {
                let v = points[i * dim + k];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best.1 {
                best = (k, hi - lo);
            }
        }
        if best.1 <= 0.0 {
            return id;
        }
        let split_dim = best.0;
        let mid = n / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            points[a * dim + split_dim].total_cmp(&points[b * dim + split_dim]).then(a.cmp(&b))
        });
        let value = points[order[mid] * dim + split_dim];
        let (lo, hi) = order.split_at_mut(mid);
        let left = Self::build_node(points, dim, lo, offset, nodes);
        let right = Self::build_node(points, dim, hi, offset + mid, nodes);
        nodes[id] = Node::Split { dim: split_dim, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `k` nearest rows to `query` as `(squared distance, row index)`,
    /// nearest first. `out` is cleared first.
    pub fn nearest(&self, query: &[f64], k: usize, out: &mut Vec<(f64, usize)>) {
        out.clear();
        if k == 0 || self.len == 0 {
            return;
        }
        self.search(0, query, k.min(self.len), out);
    }

    fn search(&self, node: usize, q: &[f64], k: usize, best: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                let d = self.dim;
                for pos in start..end {
                    let p = &self.points[pos * d..(pos + 1) * d];
                    let mut d2 = 0.0;
                    for (a, b) in p.iter().zip(q) {
                        let t = a - b;
                        d2 += t * t;
                    }
                    let cand = (d2, self.index[pos]);
                    if best.len() < k {
                        let at = best.partition_point(|&e| before(e, cand));
                        best.insert(at, cand);
                    } else if before(cand, best[k - 1]) {
                        best.pop();
                        let at = best.partition_point(|&e| before(e, cand));
                        best.insert(at, cand);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.search(far, q, k, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn brute(points: &[f64], dim: usize, q: &[f64], k: usize) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = points
            .chunks(dim)
            .enumerate()
            .map(|(i, p)| (p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let mut r = rng::stream(5, 0);
        // Integer grid coordinates produce many exact distance ties.
        let points: Vec<f64> = (0..600).map(|_| r.random_range(0..6) as f64).collect();
        let tree = KdTree::build(&points, 3, 200);
        let mut out = Vec::new();
        for _ in 0..200 {
            let q: Vec<f64> = (0..3).map(|_| r.random_range(0..6) as f64).collect();
            for k in [1, 7, 10, 200] {
                tree.nearest(&q, k, &mut out);
                assert_eq!(out, brute(&points, 3, &q, k));
            }
        }
    }

    #[test]
    fn zero_dimensional_tree_returns_lowest_indices() {
        let tree = KdTree::build(&[], 0, 5);
        let mut out = Vec::new();
        tree.nearest(&[], 3, &mut out);
        assert_eq!(out, vec![(0.0, 0), (0.0, 1), (0.0, 2)]);
    }

    #[test]
    fn identical_points_do_not_recurse_forever() {
        let points = vec![1.5; 2 * 100];
        let tree = KdTree::build(&points, 2, 100);
        let mut out = Vec::new();
        tree.nearest(&[0.0, 0.0], 2, &mut out);
        assert_eq!(out.iter().map(|e| e.1).collect::<Vec<_>>(), vec![0, 1]);
    }
}
