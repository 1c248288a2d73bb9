//! Feed-forward ReLU network trained with ADAM on squared loss.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{self, purpose, StreamRng};

#[derive(Clone, Copy, Debug)]
pub(crate) struct TrainParams {
    pub dropout: f64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub warm_start_noise: f64,
}

/// Layer `l` maps `sizes[l]` inputs to `sizes[l + 1]` outputs. Parameters are
/// stored flat, layer by layer, weights (row-major, output-major) before biases.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    epoch_losses: Vec<f64>,
}

struct Workspace {
    /// Pre-activations and activations per layer; `acts[0]` is the input.
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Mlp {
    fn offsets(sizes: &[usize]) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(sizes.len() - 1);
        let mut at = 0;
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            out.push((at, at + n_in * n_out));
            at += n_in * n_out + n_out;
        }
        out
    }

    fn n_params(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// He-initialized network; the output bias starts at `output_bias`.
    pub fn new(dim: usize, hidden: &[usize], output_bias: f64, seed: u64) -> Self {
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut r = rng::stream(rng::derive_seed(seed, &[purpose::FIT]), 0);
        let mut params = vec![0.0; Self::n_params(&sizes)];
        for (l, (w_at, b_at)) in Self::offsets(&sizes).into_iter().enumerate() {
            let std = (2.0 / sizes[l] as f64).sqrt();
            for p in &mut params[w_at..b_at] {
                *p = std * r.sample::<f64, _>(StandardNormal);
            }
        }
        let last = params.len() - 1;
        params[last] = output_bias;
        Self { sizes, params, epoch_losses: Vec::new() }
    }

    pub fn hidden(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    pub fn dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.params.len(), "parameter count mismatch");
        self.params.copy_from_slice(params);
    }

    /// Full-data training MSE after each epoch.
    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    fn workspace(&self) -> Workspace {
        let widest = *self.sizes.iter().max().expect("non-empty");
        Workspace {
            pre: self.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            acts: self.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            masks: self.sizes.iter().map(|&n| vec![1.0; n]).collect(),
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
        }
    }

    /// Forward pass into `ws`; returns the output. With `dropout`, hidden
    /// activations are zeroed with probability `p` and the rest scaled by `1/(1-p)`.
    fn forward(&self, x: &[f64], ws: &mut Workspace, mut dropout: Option<(&mut StreamRng, f64)>) -> f64 {
        ws.acts[0].copy_from_slice(x);
        let n_layers = self.sizes.len() - 1;
        for (l, (w_at, b_at)) in Self::offsets(&self.sizes).into_iter().enumerate() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            let pre = &mut ws.pre[l + 1];
            for o in 0..n_out {
                let row = &self.params[w_at + o * n_in..w_at + (o + 1) * n_in];
                let mut z = self.params[b_at + o];
                for (w, a) in row.iter().zip(input.iter()) {
                    z += w * a;
                }
                pre[o] = z;
            }
            if l + 1 == n_layers {
                out[0] = pre[0];
            } else {
                let mask = &mut ws.masks[l + 1];
                match dropout.as_mut() {
                    Some((r, p)) => {
                        let keep = 1.0 / (1.0 - *p);
                        for m in mask.iter_mut() {
                            *m = if r.random::<f64>() < *p { 0.0 } else { keep };
                        }
                    }
                    None => mask.fill(1.0),
                }
                for o in 0..n_out {
                    out[o] = pre[o].max(0.0) * mask[o];
                }
            }
        }
        ws.acts[n_layers][0]
    }

    /// Adds `d(scale * (f(x) - y)^2) / d(params)` to `grad` using the state left by `forward`.
    fn backward(&self, ws: &mut Workspace, residual: f64, scale: f64, grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let offsets = Self::offsets(&self.sizes);
        ws.delta[0] = 2.0 * scale * residual;
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_at, b_at) = offsets[l];
            let input = &ws.acts[l];
            for o in 0..n_out {
                let d = ws.delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[b_at + o] += d;
                let g = &mut grad[w_at + o * n_in..w_at + (o + 1) * n_in];
                for (gi, a) in g.iter_mut().zip(input.iter()) {
                    *gi += d * a;
                }
            }
            if l == 0 {
                break;
            }
            for i in 0..n_in {
                let active = ws.pre[l][i] > 0.0;
                ws.delta_prev[i] = if active {
                    let mut s = 0.0;
                    for o in 0..n_out {
                        s += self.params[w_at + o * n_in + i] * ws.delta[o];
                    }
                    s * ws.masks[l][i]
                } else {
                    0.0
                };
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }

    /// Mean squared error over the rows of `features` and its gradient with
    /// respect to [`Mlp::params`], without dropout.
    pub fn loss_and_grad(&self, features: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut ws = self.workspace();
        let scale = 1.0 / targets.len() as f64;
        let mut loss = 0.0;
        for (x, &y) in features.chunks_exact(self.dim()).zip(targets) {
            let r = self.forward(x, &mut ws, None) - y;
            loss += r * r * scale;
            self.backward(&mut ws, r, scale, &mut grad);
        }
        (loss, grad)
    }

    fn mse(&self, features: &[f64], targets: &[f64]) -> f64 {
        let mut ws = self.workspace();
        features
            .chunks_exact(self.dim())
            .zip(targets)
            .map(|(x, &y)| {
                let r = self.forward(x, &mut ws, None) - y;
                r * r
            })
            .sum::<f64>()
            / targets.len() as f64
    }

    pub(crate) fn fit(
        features: &[f64],
        dim: usize,
        targets: &[f64],
        hidden: &[usize],
        p: &TrainParams,
        warm_start: Option<&Mlp>,
        seed: u64,
    ) -> Self {
        let m = targets.len();
        let mean = targets.iter().sum::<f64>() / m as f64;
        let mut net = match warm_start {
            Some(prev) => {
                let mut r = rng::stream(rng::derive_seed(seed, &[purpose::FIT]), 1);
                let mut net = prev.clone();
                for w in &mut net.params {
                    *w += p.warm_start_noise * r.sample::<f64, _>(StandardNormal);
                }
                net.epoch_losses.clear();
                net
            }
            None => Mlp::new(dim, hidden, mean, seed),
        };

        let n = net.params.len();
        let (mut m1, mut m2, mut grad) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut ws = net.workspace();
        let mut r = rng::stream(rng::derive_seed(seed, &[purpose::FIT]), 2);
        let mut order: Vec<usize> = (0..m).collect();
        let mut t = 0i32;
        for epoch in 0..p.epochs {
            let lr = p.learning_rate * p.lr_decay.powi(epoch as i32);
            order.shuffle(&mut r);
            for batch in order.chunks(p.batch_size) {
                grad.fill(0.0);
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let x = &features[i * dim..(i + 1) * dim];
                    let drop = (p.dropout > 0.0).then_some((&mut r, p.dropout));
                    let res = net.forward(x, &mut ws, drop) - targets[i];
                    net.backward(&mut ws, res, scale, &mut grad);
                }
                t += 1;
                let c1 = 1.0 - p.beta1.powi(t);
                let c2 = 1.0 - p.beta2.powi(t);
                for k in 0..n {
                    m1[k] = p.beta1 * m1[k] + (1.0 - p.beta1) * grad[k];
                    m2[k] = p.beta2 * m2[k] + (1.0 - p.beta2) * grad[k] * grad[k];
                    net.params[k] -= lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + 1e-8);
                }
            }
            let loss = net.mse(features, targets);
            net.epoch_losses.push(loss);
        }
        net
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut ws = self.workspace();
        self.forward(x, &mut ws, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(epochs: usize) -> TrainParams {
        TrainParams {
            dropout: 0.1,
            learning_rate: 3e-3,
            lr_decay: 0.97,
            batch_size: 64,
            epochs,
            beta1: 0.9,
            beta2: 0.999,
            warm_start_noise: 0.005,
        }
    }

    #[test]
    fn layout_and_output_bias() {
        let net = Mlp::new(3, &[5, 4], 2.5, 0);
        assert_eq!(net.params().len(), 3 * 5 + 5 + 5 * 4 + 4 + 4 + 1);
        assert_eq!(*net.params().last().unwrap(), 2.5);
        assert_eq!(net.hidden(), &[5, 4]);
    }

    #[test]
    fn learns_a_smooth_function() {
        let mut r = rng::stream(8, 0);
        let x: Vec<f64> = (0..2000).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let net = Mlp::fit(&x, 1, &y, &[32], &params(60), None, 1);
        let losses = net.epoch_losses();
        assert!(losses[losses.len() - 1] < 0.2 * losses[0]);
        assert!((net.predict(&[0.5]) - 0.25).abs() < 0.1);
    }

    #[test]
    fn warm_start_stays_close_to_source() {
        let prev = Mlp::new(2, &[8], 0.0, 4);
        let y = vec![0.0; 10];
        let x = vec![0.0; 20];
        let warm = Mlp::fit(&x, 2, &y, &[8], &TrainParams { learning_rate: 1e-12, ..params(1) }, Some(&prev), 5);
        let max_dev = warm.params().iter().zip(prev.params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_dev > 0.0 && max_dev < 0.05);
    }
}
