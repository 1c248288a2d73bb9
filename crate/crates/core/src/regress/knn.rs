use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::KdTree;
use crate::error::{Error, Result};

thread_local! {
    static NEIGHBORS: RefCell<(Vec<(f64, usize)>, Vec<usize>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// Mean target of the `k` nearest training rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KnnModel {
    tree: KdTree,
    targets: Vec<f64>,
    k: usize,
}

impl KnnModel {
    pub fn fit(features: &[f64], dim: usize, targets: &[f64], k: usize) -> Result<Self> {
        let m = targets.len();
        if k == 0 || k > m {
            return Err(Error::invalid(format!("knn needs 1 <= k <= M, got k={k}, M={m}")));
        }
        Ok(Self { tree: KdTree::build(features, dim, m), targets: targets.to_vec(), k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Row indices of the `k` nearest neighbours, ascending.
    pub fn neighbors(&self, x: &[f64]) -> Vec<usize> {
        let mut found = Vec::new();
        self.tree.nearest(x, self.k, &mut found);
        let mut idx: Vec<usize> = found.into_iter().map(|e| e.1).collect();
        idx.sort_unstable();
        idx
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        NEIGHBORS.with(|cell| {
            let (found, idx) = &mut *cell.borrow_mut();
            self.tree.nearest(x, self.k, found);
            idx.clear();
            idx.extend(found.iter().map(|e| e.1));
            idx.sort_unstable();
            let sum: f64 = idx.iter().map(|&i| self.targets[i]).sum();
            sum / self.k as f64
        })
    }
}
