//! Histogram gradient boosting on squared loss with leaf-wise tree growth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, purpose};

#[derive(Clone, Copy, Debug)]
pub(crate) struct BoostParams {
    pub n_iter: usize,
    pub learning_rate: f64,
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    pub lambda_l2: f64,
    pub bagging_fraction: f64,
    pub max_bins: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Booster {
    init: f64,
    trees: Vec<Tree>,
    training_mse: Vec<f64>,
}

/// Upper bin edges per feature: value `x` falls in bin `#{t in edges : t < x}`.
fn bin_edges(column: &mut [f64], max_bins: usize) -> Vec<f64> {
    column.sort_unstable_by(f64::total_cmp);
    let m = column.len();
    let mut distinct = column.to_vec();
    distinct.dedup();
    if distinct.len() <= max_bins {
        return distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let mut edges = Vec::with_capacity(max_bins - 1);
    for b in 1..max_bins {
        let at = b * m / max_bins;
        if at == 0 || column[at - 1] == column[at] {
            continue;
        }
        let edge = 0.5 * (column[at - 1] + column[at]);
        if edges.last().is_none_or(|&last| edge > last) {
            edges.push(edge);
        }
    }
    edges
}

#[derive(Clone, Copy, Default)]
struct Bin {
    g: f64,
    h: f64,
    n: usize,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    bin: usize,
}

struct Leaf {
    node: usize,
    start: usize,
    end: usize,
    hist: Vec<Bin>,
    best: Option<Candidate>,
}

struct TreeBuilder<'a> {
    bins: &'a [u16],
    edges: &'a [Vec<f64>],
    dim: usize,
    offsets: Vec<usize>,
    total_bins: usize,
    params: BoostParams,
}

impl TreeBuilder<'_> {
    fn histogram(&self, rows: &[usize], grad: &[f64]) -> Vec<Bin> {
        let mut hist = vec![Bin::default(); self.total_bins];
        for &r in rows {
            let g = grad[r];
            let row = &self.bins[r * self.dim..(r + 1) * self.dim];
            for (f, &b) in row.iter().enumerate() {
                let slot = &mut hist[self.offsets[f] + b as usize];
                slot.g += g;
                slot.h += 1.0;
                slot.n += 1;
            }
        }
        hist
    }

    fn best_split(&self, hist: &[Bin]) -> Option<Candidate> {
        let lambda = self.params.lambda_l2;
        let min_n = self.params.min_data_in_leaf;
        let mut best: Option<Candidate> = None;
        for f in 0..self.dim {
            let bins = &hist[self.offsets[f]..self.offsets[f] + self.edges[f].len() + 1];
            let (g, h, n) = bins.iter().fold((0.0, 0.0, 0), |a, b| (a.0 + b.g, a.1 + b.h, a.2 + b.n));
            let parent = g * g / (h + lambda);
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0);
            for (b, bin) in bins.iter().enumerate().take(bins.len() - 1) {
                gl += bin.g;
                hl += bin.h;
                nl += bin.n;
                if nl < min_n {
                    continue;
                }
                if n - nl < min_n {
                    break;
                }
                let (gr, hr) = (g - gl, h - hl);
                let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                if gain > 0.0 && best.is_none_or(|c| gain > c.gain) {
                    best = Some(Candidate { gain, feature: f, bin: b });
                }
            }
        }
        best
    }

    fn build(&self, rows: &mut [usize], grad: &[f64]) -> Tree {
        let mut nodes = vec![Node::Leaf(0.0)];
        let hist = self.histogram(rows, grad);
        let best = self.best_split(&hist);
        let mut leaves = vec![Leaf { node: 0, start: 0, end: rows.len(), hist, best }];
        while leaves.len() < self.params.num_leaves {
            let pick = leaves
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.best.map(|c| (i, c.gain)))
                .fold(None, |acc: Option<(usize, f64)>, (i, g)| match acc {
                    Some((_, bg)) if bg >= g => acc,
                    _ => Some((i, g)),
                });
            let Some((li, _)) = pick else { break };
            let leaf = leaves.swap_remove(li);
            let cand = leaf.best.expect("picked leaf has a split");
            let (f, b) = (cand.feature, cand.bin);
            let slice = &mut rows[leaf.start..leaf.end];
            let mut split = 0;
            for i in 0..slice.len() {
                if (self.bins[slice[i] * self.dim + f] as usize) <= b {
                    slice.swap(i, split);
                    split += 1;
                }
            }
            let mid = leaf.start + split;
            let (small_is_left, small) = if split <= slice.len() - split {
                (true, &rows[leaf.start..mid])
            } else {
                (false, &rows[mid..leaf.end])
            };
            let small_hist = self.histogram(small, grad);
            let large_hist: Vec<Bin> = leaf
                .hist
                .iter()
                .zip(&small_hist)
                .map(|(p, s)| Bin { g: p.g - s.g, h: p.h - s.h, n: p.n - s.n })
                .collect();
            let (left_hist, right_hist) =
                if small_is_left { (small_hist, large_hist) } else { (large_hist, small_hist) };

            let left = nodes.len();
            nodes.push(Node::Leaf(0.0));
            nodes.push(Node::Leaf(0.0));
            nodes[leaf.node] = Node::Split { feature: f, threshold: self.edges[f][b], left, right: left + 1 };
            let lb = self.best_split(&left_hist);
            let rb = self.best_split(&right_hist);
            leaves.push(Leaf { node: left, start: leaf.start, end: mid, hist: left_hist, best: lb });
            leaves.push(Leaf { node: left + 1, start: mid, end: leaf.end, hist: right_hist, best: rb });
        }
        let (lr, lambda) = (self.params.learning_rate, self.params.lambda_l2);
        for leaf in &leaves {
            let members = &rows[leaf.start..leaf.end];
            let g: f64 = members.iter().map(|&r| grad[r]).sum();
            let h = members.len() as f64;
            nodes[leaf.node] = Node::Leaf(-lr * g / (h + lambda));
        }
        Tree { nodes }
    }
}

impl Booster {
    pub(crate) fn fit(features: &[f64], dim: usize, targets: &[f64], params: BoostParams, seed: u64) -> Self {
        let m = targets.len();
        let mut edges = Vec::with_capacity(dim);
        let mut column = vec![0.0; m];
        for f in 0..dim {
            for (i, c) in column.iter_mut().enumerate() {
                *c = features[i * dim + f];
            }
            edges.push(bin_edges(&mut column, params.max_bins.min(u16::MAX as usize)));
        }
        let mut bins = vec![0u16; m * dim];
        for i in 0..m {
            for f in 0..dim {
                let x = features[i * dim + f];
                bins[i * dim + f] = edges[f].partition_point(|&t| t < x) as u16;
            }
        }
        let mut offsets = Vec::with_capacity(dim);
        let mut total_bins = 0;
        for e in &edges {
            offsets.push(total_bins);
            total_bins += e.len() + 1;
        }
        let builder = TreeBuilder { bins: &bins, edges: &edges, dim, offsets, total_bins, params };

        let init = targets.iter().sum::<f64>() / m as f64;
        let mut pred = vec![init; m];
        let mut grad = vec![0.0; m];
        let mut trees = Vec::with_capacity(params.n_iter);
        let mut training_mse = Vec::with_capacity(params.n_iter);
        let n_bag = ((params.bagging_fraction * m as f64).floor() as usize).clamp(1, m);
        let key = rng::derive_seed(seed, &[purpose::FIT]);
        let mut pool: Vec<usize> = (0..m).collect();
        for it in 0..params.n_iter {
            for i in 0..m {
                grad[i] = pred[i] - targets[i];
            }
            let mut rows = if n_bag == m {
                (0..m).collect::<Vec<_>>()
            } else {
                let mut r = rng::stream(key, it as u64);
                for i in 0..n_bag {
                    let j = r.random_range(i..m);
                    pool.swap(i, j);
                }
                let mut chosen = pool[..n_bag].to_vec();
                chosen.sort_unstable();
                chosen
            };
            let tree = builder.build(&mut rows, &grad);
            let mut sse = 0.0;
            for i in 0..m {
                pred[i] += tree.predict(&features[i * dim..(i + 1) * dim]);
                let e = pred[i] - targets[i];
                sse += e * e;
            }
            training_mse.push(sse / m as f64);
            trees.push(tree);
        }
        Self { init, trees, training_mse }
    }

    pub fn training_mse(&self) -> &[f64] {
        &self.training_mse
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut acc = self.init;
        for t in &self.trees {
            acc += t.predict(x);
        }
        acc
    }
}
