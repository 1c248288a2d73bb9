use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{self, purpose};

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

/// Bagged regression trees with variance-reduction splits and random
/// feature subsets at every split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
}

struct Grower<'a> {
    x: &'a [f64],
    y: &'a [f64],
    dim: usize,
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    nodes: Vec<Node>,
    features: Vec<usize>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize, rng: &mut rng::StreamRng) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&r| self.y[r]).sum();
        self.nodes.push(Node::Leaf(sum / n as f64));
        if depth >= self.max_depth || n < 2 * self.min_leaf {
            return id;
        }

        // Partial Fisher-Yates: the first `mtry` entries become the candidate set.
        for i in 0..self.mtry {
            let j = rng.random_range(i..self.dim);
            self.features.swap(i, j);
        }
        let parent = sum * sum / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for c in 0..self.mtry {
            let f = self.features[c];
            let x = self.x;
            let dim = self.dim;
            rows.sort_unstable_by(|&a, &b| x[a * dim + f].total_cmp(&x[b * dim + f]).then(a.cmp(&b)));
            let mut left = 0.0;
            for i in 0..n - 1 {
                left += self.y[rows[i]];
                let nl = i + 1;
                let (cur, next) = (x[rows[i] * dim + f], x[rows[i + 1] * dim + f]);
                if nl < self.min_leaf || n - nl < self.min_leaf || cur == next {
                    continue;
                }
                let right = sum - left;
                let gain = left * left / nl as f64 + right * right / (n - nl) as f64 - parent;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, 0.5 * (cur + next)));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return id;
        };
        if !(gain > 1e-12 * parent.abs().max(1e-300)) {
            return id;
        }
        let (x, dim) = (self.x, self.dim);
        let mut split = 0;
        for i in 0..n {
            if x[rows[i] * dim + feature] <= threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (lo, hi) = rows.split_at_mut(split);
        let left = self.grow(lo, depth + 1, rng);
        let right = self.grow(hi, depth + 1, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

impl Forest {
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        features: &[f64],
        dim: usize,
        targets: &[f64],
        n_trees: usize,
        max_depth: usize,
        min_samples_leaf: usize,
        mtry: usize,
        seed: u64,
    ) -> Self {
        let m = targets.len();
        let key = rng::derive_seed(seed, &[purpose::FIT]);
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut r = rng::stream(key, t as u64);
                let mut rows: Vec<usize> = (0..m).map(|_| r.random_range(0..m)).collect();
                let mut g = Grower {
                    x: features,
                    y: targets,
                    dim,
                    max_depth,
                    min_leaf: min_samples_leaf,
                    mtry: mtry.clamp(1, dim),
                    nodes: Vec::new(),
                    features: (0..dim).collect(),
                };
                g.grow(&mut rows, 0, &mut r);
                Tree { nodes: g.nodes }
            })
            .collect();
        Self { trees }
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_function_is_recovered() {
        let x: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 0.5 { 1.0 } else { 3.0 }).collect();
        let f = Forest::fit(&x, 1, &y, 25, 3, 5, 1, 0);
        assert!((f.predict(&[0.1]) - 1.0).abs() < 0.05);
        assert!((f.predict(&[0.9]) - 3.0).abs() < 0.05);
    }

    #[test]
    fn leaves_respect_minimum_size_and_depth() {
        let x: Vec<f64> = (0..60).map(|i| (i * 7 % 60) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let f = Forest::fit(&x, 1, &y, 3, 2, 5, 1, 1);
        for t in &f.trees {
            assert!(t.nodes.len() <= 7);
        }
        let constant = Forest::fit(&x, 1, &vec![2.5; 60], 4, 3, 5, 1, 2);
        assert_eq!(constant.predict(&[13.0]), 2.5);
    }
}
