use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Projection onto the leading principal directions of a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    mean: Vec<f64>,
    /// `d x k` row-major; column `j` is the `j`-th principal direction.
    basis: Vec<f64>,
    k: usize,
    explained_variance: Vec<f64>,
}

/// Principal directions of an `M x dim` sample, ordered by explained variance.
///
/// Each direction's sign is fixed so that its largest-magnitude entry is positive.
pub fn fit_pca(features: &[f64], dim: usize, k: usize) -> Result<PcaProjection> {
    if dim == 0 || features.len() % dim != 0 {
        return Err(Error::DimensionMismatch { expected: dim, got: features.len() });
    }
    if k == 0 || k > dim {
        return Err(Error::invalid(format!("PCA needs 1 <= k' <= d, got k'={k}, d={dim}")));
    }
    let m = features.len() / dim;
    if m < 2 {
        return Err(Error::invalid("PCA needs at least two rows"));
    }
    let mut mean = vec![0.0; dim];
    for row in features.chunks_exact(dim) {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut c = vec![0.0; dim];
    for row in features.chunks_exact(dim) {
        for i in 0..dim {
            c[i] = row[i] - mean[i];
        }
        for i in 0..dim {
            for j in i..dim {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / (m - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    if cov.trace() <= 0.0 {
        return Err(Error::Degenerate("all rows are identical".into()));
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut basis = vec![0.0; dim * k];
    let mut explained_variance = Vec::with_capacity(k);
    for (j, &src) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(src);
        let pivot = (0..dim).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..dim {
            basis[i * k + j] = sign * v[i];
        }
        explained_variance.push(eig.eigenvalues[src].max(0.0));
    }
    Ok(PcaProjection { mean, basis, k, explained_variance })
}

impl PcaProjection {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `d x k'` basis.
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    #[inline]
    pub fn transform(&self, x: &[f64], out: &mut [f64]) {
        let k = self.k;
        out[..k].fill(0.0);
        for (i, (xi, mi)) in x.iter().zip(&self.mean).enumerate() {
            let c = xi - mi;
            for j in 0..k {
                out[j] += c * self.basis[i * k + j];
            }
        }
    }

    pub fn transform_rows(&self, xs: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; xs.len() / d * self.k];
        for (src, dst) in xs.chunks_exact(d).zip(out.chunks_exact_mut(self.k)) {
            self.transform(src, dst);
        }
        out
    }

    /// Maps projected coordinates back into feature space.
    pub fn inverse_transform(&self, z: &[f64], out: &mut [f64]) {
        let k = self.k;
        for i in 0..self.dim() {
            out[i] = self.mean[i] + (0..k).map(|j| self.basis[i * k + j] * z[j]).sum::<f64>();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut r = rng::stream(1, 0);
        let x: Vec<f64> = (0..400 * 5).map(|_| r.random::<f64>()).collect();
        for k in 1..=5 {
            let p = fit_pca(&x, 5, k).unwrap();
            for a in 0..k {
                for b in 0..k {
                    let dot: f64 = (0..5).map(|i| p.basis()[i * k + a] * p.basis()[i * k + b]).sum();
                    assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
                }
            }
            assert!(p.explained_variance().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_one_data_keeps_distances() {
        let x: Vec<f64> = (0..50).flat_map(|i| [i as f64 * 0.3, 1.0 - i as f64 * 0.6]).collect();
        let p = fit_pca(&x, 2, 1).unwrap();
        let z = p.transform_rows(&x);
        for a in 0..50 {
            for b in 0..50 {
                let raw = dist(&x[2 * a..2 * a + 2], &x[2 * b..2 * b + 2]);
                assert!((raw - (z[a] - z[b]).abs()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let mut r = rng::stream(2, 0);
        let x: Vec<f64> = (0..100 * 5).map(|_| r.random_range(-3.0..3.0)).collect();
        let p = fit_pca(&x, 5, 5).unwrap();
        let mut z = [0.0; 5];
        let mut back = [0.0; 5];
        for row in x.chunks(5) {
            p.transform(row, &mut z);
            p.inverse_transform(&z, &mut back);
            assert!(dist(row, &back) < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(fit_pca(&[1.0, 2.0, 3.0, 4.0], 2, 3).is_err());
        assert!(fit_pca(&[1.0, 2.0], 2, 1).is_err());
        assert!(matches!(fit_pca(&[1.0, 2.0, 1.0, 2.0], 2, 1), Err(Error::Degenerate(_))));
    }
}
