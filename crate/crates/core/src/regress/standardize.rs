use serde::{Deserialize, Serialize};

/// Per-feature affine rescaling to zero mean and unit (population) variance.
/// Constant features keep a scale of 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[f64], dim: usize) -> Self {
        let m = (features.len() / dim).max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in features.chunks_exact(dim) {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; dim];
        for row in features.chunks_exact(dim) {
            for k in 0..dim {
                let c = row[k] - mean[k];
                var[k] += c * c;
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let s = (v / m).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    #[inline]
    pub fn transform(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.mean.len() {
            out[k] = (x[k] - self.mean[k]) / self.scale[k];
        }
    }

    pub fn transform_rows(&self, xs: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        let mut out = vec![0.0; xs.len()];
        for (src, dst) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.transform(src, dst);
        }
        out
    }
}
