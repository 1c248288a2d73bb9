#![allow(dead_code)]

use std::sync::Arc;

use optswitch::process::{ProblemSpec, TimeGrid};
use optswitch::rng;
use rand::Rng;

/// A deterministic problem on integer states `0..n_states` with unit time
/// steps, random payoffs, costs and transition maps.
pub struct FiniteInstance {
    pub spec: ProblemSpec,
    pub n_states: usize,
    pub n_steps: usize,
    pub n_modes: usize,
    /// `next[n][x]`: state reached from `x` at step `n`.
    pub next: Arc<Vec<Vec<usize>>>,
    /// `payoff[(j * n_steps + n) * n_states + x]`
    pub payoff: Arc<Vec<f64>>,
    /// `cost[(i * n_modes + j) * n_states + x]`
    pub cost: Arc<Vec<f64>>,
}

impl FiniteInstance {
    pub fn random(seed: u64) -> Self {
        let mut r = rng::stream(seed, 0);
        let n_states = r.random_range(2..=10usize);
        let n_steps = r.random_range(1..=4usize);
        let n_modes = r.random_range(2..=3usize);
        let next: Vec<Vec<usize>> =
            (0..n_steps).map(|_| (0..n_states).map(|_| r.random_range(0..n_states)).collect()).collect();
        let payoff: Vec<f64> = (0..n_modes * n_steps * n_states).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut cost = vec![0.0; n_modes * n_modes * n_states];
        for i in 0..n_modes {
            for j in 0..n_modes {
                if i != j {
                    for x in 0..n_states {
                        cost[(i * n_modes + j) * n_states + x] = r.random_range(0.0..0.5);
                    }
                }
            }
        }
        Self::build(n_states, n_steps, n_modes, next, payoff, cost)
    }

    pub fn build(
        n_states: usize,
        n_steps: usize,
        n_modes: usize,
        next: Vec<Vec<usize>>,
        payoff: Vec<f64>,
        cost: Vec<f64>,
    ) -> Self {
        let (next, payoff, cost) = (Arc::new(next), Arc::new(payoff), Arc::new(cost));
        let grid = TimeGrid::new(0.0, n_steps as f64, n_steps).unwrap();
        let (tn, tp, tc) = (next.clone(), payoff.clone(), cost.clone());
        let spec = ProblemSpec::builder("finite", 1, n_modes, grid)
            .drift(move |t, x, out| {
                let n = t.round() as usize;
                let s = x[0].round() as usize;
                out[0] = tn[n][s] as f64 - x[0];
            })
            .payoff(move |j, t, x| tp[(j * n_steps + t.round() as usize) * n_states + x[0].round() as usize])
            .switch_cost(move |i, j, _, x| tc[(i * n_modes + j) * n_states + x[0].round() as usize])
            .initial(move |r, out| out[0] = r.random_range(0..n_states) as f64)
            .build()
            .unwrap();
        Self { spec, n_states, n_steps, n_modes, next, payoff, cost }
    }

    pub fn f(&self, j: usize, n: usize, x: usize) -> f64 {
        self.payoff[(j * self.n_steps + n) * self.n_states + x]
    }

    pub fn c(&self, i: usize, j: usize, x: usize) -> f64 {
        self.cost[(i * self.n_modes + j) * self.n_states + x]
    }

    /// Exhaustive DP: `v[n][i * n_states + x]` for `n = 0..=N`.
    pub fn dp(&self) -> Vec<Vec<f64>> {
        let (s, dm) = (self.n_states, self.n_modes);
        let mut v = vec![vec![0.0; dm * s]; self.n_steps + 1];
        for n in (0..self.n_steps).rev() {
            for i in 0..dm {
                for x in 0..s {
                    let y = self.next[n][x];
                    let best = (0..dm)
                        .map(|j| self.f(j, n, x) * 1.0 - self.c(i, j, x) + v[n + 1][j * s + y])
                        .fold(f64::NEG_INFINITY, f64::max);
                    v[n][i * s + x] = best;
                }
            }
        }
        v
    }
}

/// Largest gap between the solver's reconstructed values and exhaustive DP
/// over every `(step, mode, state)` visited by the training paths.
pub fn oracle_dp_error(seed: u64) -> f64 {
    use optswitch::process::simulate_paths;
    use optswitch::regress::{Hyperparams, ModelSpec};
    use optswitch::solver::{backward_solve, reconstruct_value, SolverConfig};

    let inst = FiniteInstance::random(seed);
    let m = 200 * inst.n_states;
    let paths = simulate_paths(&inst.spec, m, seed).unwrap();
    let mut cfg = SolverConfig::new(ModelSpec { hyper: Hyperparams::Knn { k: 1 }, standardize: false }, seed);
    cfg.train_fraction = 1.0;
    let (ens, _) = backward_solve(&inst.spec, &paths, &cfg).unwrap();
    let v = inst.dp();
    let mut worst: f64 = 0.0;
    for n in 0..inst.n_steps {
        let mut seen = vec![false; inst.n_states];
        for s in 0..m {
            seen[paths.state(s, n)[0] as usize] = true;
        }
        if n == 0 {
            assert!(seen.iter().all(|&b| b), "initial sample misses a state");
        }
        for x in (0..inst.n_states).filter(|&x| seen[x]) {
            for i in 0..inst.n_modes {
                let got = reconstruct_value(&ens, &inst.spec, i, n, &[x as f64]).unwrap();
                worst = worst.max((got - v[n][i * inst.n_states + x]).abs());
            }
        }
    }
    worst
}

pub fn uniform_rows(seed: u64, m: usize, dim: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut r = rng::stream(seed, 7);
    (0..m * dim).map(|_| r.random_range(lo..hi)).collect()
}

/// Number of `(query, dim)` cases where the kd-tree's `k` nearest rows differ
/// from a brute-force scan, over 1000 queries in each of dimensions 1 to 4.
pub fn kdtree_mismatches(seed: u64) -> usize {
    use optswitch::regress::KdTree;
    let (m, k, n_queries) = (1500, 7, 1000);
    let mut bad = 0;
    for dim in 1..=4 {
        let pts = uniform_rows(seed + dim as u64, m, dim, -1.0, 1.0);
        let queries = uniform_rows(seed + 100 + dim as u64, n_queries, dim, -1.2, 1.2);
        let tree = KdTree::build(&pts, dim, m);
        let mut got = Vec::new();
        for q in queries.chunks_exact(dim) {
            tree.nearest(q, k, &mut got);
            let mut all: Vec<(f64, usize)> = pts
                .chunks_exact(dim)
                .enumerate()
                .map(|(i, p)| (p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all[..k].iter().map(|e| e.1).collect();
            let have: Vec<usize> = got.iter().map(|e| e.1).collect();
            if want != have {
                bad += 1;
            }
        }
    }
    bad
}

fn noisy_targets(seed: u64, xs: &[f64], dim: usize, beta: &[f64], noise: f64) -> Vec<f64> {
    use rand_distr::StandardNormal;
    let mut r = rng::stream(seed, 9);
    xs.chunks_exact(dim)
        .map(|x| {
            let clean: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            clean + 0.3 * x[0] * x[0] + noise * r.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

/// Largest prediction gap between ridge with a vanishing penalty and OLS.
pub fn ridge_ols_gap(seed: u64) -> f64 {
    use optswitch::regress::LinearModel;
    let dim = 3;
    let xs = uniform_rows(seed, 600, dim, -2.0, 2.0);
    let ys = noisy_targets(seed, &xs, dim, &[1.0, -0.5, 2.0], 0.2);
    let ols = LinearModel::fit_ols(&xs, dim, &ys, 2).unwrap();
    let ridge = LinearModel::fit_ridge(&xs, dim, &ys, 2, 1e-12).unwrap();
    uniform_rows(seed + 1, 200, dim, -2.0, 2.0)
        .chunks_exact(dim)
        .map(|x| (ols.predict(x) - ridge.predict(x)).abs())
        .fold(0.0, f64::max)
}

/// Largest violation of the LASSO optimality conditions
/// `g_j = lambda sign(b_j)` for active and `|g_j| <= lambda` for zero
/// coefficients, where `g = X_c' r / M`. Also returns the number of zero
/// coefficients.
pub fn lasso_kkt_residual(seed: u64, lambda: f64) -> (f64, usize) {
    use optswitch::regress::LinearModel;
    let dim = 5;
    let m = 500;
    let xs = uniform_rows(seed, m, dim, -1.0, 1.0);
    let ys = noisy_targets(seed, &xs, dim, &[2.0, 0.0, -1.0, 0.0, 0.02], 0.1);
    let model = LinearModel::fit_lasso(&xs, dim, &ys, 1, lambda, 1e-13, 1_000_000).unwrap();
    let b = &model.coefficients()[1..];
    let mut means = vec![0.0; dim];
    for x in xs.chunks_exact(dim) {
        for (a, v) in means.iter_mut().zip(x) {
            *a += v / m as f64;
        }
    }
    let resid: Vec<f64> = xs.chunks_exact(dim).zip(&ys).map(|(x, y)| y - model.predict(x)).collect();
    let mut worst: f64 = 0.0;
    for j in 0..dim {
        let g: f64 = xs.chunks_exact(dim).zip(&resid).map(|(x, r)| (x[j] - means[j]) * r).sum::<f64>() / m as f64;
        let v = if b[j] != 0.0 { (g - lambda * b[j].signum()).abs() } else { (g.abs() - lambda).max(0.0) };
        worst = worst.max(v);
    }
    (worst, b.iter().filter(|v| **v == 0.0).count())
}

/// Largest relative gap between the analytic MLP gradient and central
/// differences on 10 parameters spread over all layers, at a generic point.
pub fn mlp_gradient_error(seed: u64) -> f64 {
    use optswitch::regress::Mlp;
    let dim = 3;
    let xs = uniform_rows(seed, 25, dim, -1.5, 1.5);
    let ys: Vec<f64> = xs.chunks_exact(dim).map(|x| x[0].sin() + x[1] * x[2]).collect();
    let mut net = Mlp::new(dim, &[8, 5], 0.2, seed);
    // Move off the ReLU kinks at zero bias.
    let jitter = uniform_rows(seed + 1, net.params().len(), 1, -0.1, 0.1);
    let moved: Vec<f64> = net.params().iter().zip(&jitter).map(|(p, j)| p + j).collect();
    net.set_params(&moved);
    let (_, grad) = net.loss_and_grad(&xs, &ys);
    let p0 = net.params().to_vec();
    let h = 1e-6;
    let stride = p0.len() / 10;
    let mut worst: f64 = 0.0;
    for idx in (0..10).map(|i| i * stride + stride / 2) {
        let mut p = p0.clone();
        p[idx] = p0[idx] + h;
        net.set_params(&p);
        let up = net.loss_and_grad(&xs, &ys).0;
        p[idx] = p0[idx] - h;
        net.set_params(&p);
        let down = net.loss_and_grad(&xs, &ys).0;
        let fd = (up - down) / (2.0 * h);
        let scale = grad[idx].abs().max(fd.abs()) + 1e-8;
        worst = worst.max((grad[idx] - fd).abs() / scale);
    }
    net.set_params(&p0);
    worst
}

/// With `k' = d` the PCA projection is a rotation: returns the largest
/// relative distortion of pairwise squared distances, the largest
/// round-trip error, and the number of queries where PCA-k-NN and plain k-NN
/// choose different neighbours.
pub fn pca_isometry(seed: u64) -> (f64, f64, usize) {
    use optswitch::regress::{fit, fit_pca, Dataset, Hyperparams, ModelSpec};
    let dim = 4;
    let raw = uniform_rows(seed, 800, dim, -1.0, 1.0);
    let xs: Vec<f64> = raw
        .chunks_exact(dim)
        .flat_map(|r| [r[0], r[0] + 0.3 * r[1], 2.0 * r[2] - r[0], 0.5 * r[3]])
        .collect();
    let ys: Vec<f64> = xs.chunks_exact(dim).map(|x| x.iter().sum::<f64>().cos()).collect();
    let proj = fit_pca(&xs, dim, dim).unwrap();
    let z = proj.transform_rows(&xs);
    let rows = xs.len() / dim;
    let mut distortion: f64 = 0.0;
    for a in (0..rows).step_by(7) {
        let b = (a * 31 + 5) % rows;
        let d2 = |v: &[f64]| -> f64 {
            (0..dim).map(|k| (v[a * dim + k] - v[b * dim + k]).powi(2)).sum()
        };
        let (orig, rot) = (d2(&xs), d2(&z));
        if orig > 0.0 {
            distortion = distortion.max((orig - rot).abs() / orig);
        }
    }
    let mut back = vec![0.0; dim];
    let mut round_trip: f64 = 0.0;
    for (x, zx) in xs.chunks_exact(dim).zip(z.chunks_exact(dim)) {
        proj.inverse_transform(zx, &mut back);
        for (u, v) in x.iter().zip(&back) {
            round_trip = round_trip.max((u - v).abs());
        }
    }
    let data = Dataset::new(xs, dim, ys).unwrap();
    let knn = fit(&ModelSpec { hyper: Hyperparams::Knn { k: 5 }, standardize: true }, &data, None, seed).unwrap();
    let pca = fit(
        &ModelSpec { hyper: Hyperparams::PcaKnn { k: 5, components: dim }, standardize: true },
        &data,
        None,
        seed,
    )
    .unwrap();
    let queries = uniform_rows(seed + 3, 1000, dim, -1.0, 1.0);
    let a = knn.batch_predict(&queries).unwrap();
    let b = pca.batch_predict(&queries).unwrap();
    let differ = a.iter().zip(&b).filter(|(u, v)| (*u - *v).abs() > 1e-12).count();
    (distortion, round_trip, differ)
}
