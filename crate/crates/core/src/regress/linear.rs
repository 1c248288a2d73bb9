use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent vectors of all monomials in `dim` variables up to total degree
/// `degree`, in graded lexicographic order. The constant term comes first.
pub fn monomial_exponents(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    fn fill(rest: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if rest == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            fill(rest - 1, remaining - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for g in 0..=degree as u32 {
        fill(dim, g, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

/// Polynomial regression `y = sum_i coef_i * x^{e_i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    dim: usize,
    degree: usize,
    exponents: Vec<Vec<u32>>,
    coef: Vec<f64>,
}

/// Centered design without the constant column.
struct Centered {
    x: DMatrix<f64>,
    col_mean: Vec<f64>,
    y: DVector<f64>,
    y_mean: f64,
}

impl LinearModel {
    fn basis(dim: usize, degree: usize) -> Self {
        Self { dim, degree, exponents: monomial_exponents(dim, degree), coef: Vec::new() }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    /// Coefficients in the order of [`LinearModel::exponents`]; the intercept is first.
    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    /// Monomial features of `x`, constant term first.
    pub fn expand_into(&self, x: &[f64], out: &mut [f64]) {
        for (slot, e) in out.iter_mut().zip(&self.exponents) {
            let mut v = 1.0;
            for (k, &p) in e.iter().enumerate() {
                if p > 0 {
                    v *= x[k].powi(p as i32);
                }
            }
            *slot = v;
        }
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.exponents.len()];
        self.expand_into(x, &mut out);
        out
    }

    fn design(&self, features: &[f64]) -> DMatrix<f64> {
        let m = features.len() / self.dim;
        let p = self.exponents.len();
        let mut row = vec![0.0; p];
        let mut x = DMatrix::<f64>::zeros(m, p);
        for (i, xi) in features.chunks_exact(self.dim).enumerate() {
            self.expand_into(xi, &mut row);
            for (j, v) in row.iter().enumerate() {
                x[(i, j)] = *v;
            }
        }
        x
    }

    fn centered(&self, features: &[f64], targets: &[f64]) -> Centered {
        let full = self.design(features);
        let m = full.nrows();
        let p = full.ncols() - 1;
        let mut x = full.columns(1, p).into_owned();
        let mut col_mean = Vec::with_capacity(p);
        for mut col in x.column_iter_mut() {
            let mu = col.sum() / m as f64;
            col.add_scalar_mut(-mu);
            col_mean.push(mu);
        }
        let y_mean = targets.iter().sum::<f64>() / m as f64;
        let y = DVector::from_iterator(m, targets.iter().map(|v| v - y_mean));
        Centered { x, col_mean, y, y_mean }
    }

    fn set_from_centered(&mut self, beta: &[f64], c: &Centered) {
        let intercept = c.y_mean - beta.iter().zip(&c.col_mean).map(|(b, mu)| b * mu).sum::<f64>();
        self.coef = std::iter::once(intercept).chain(beta.iter().copied()).collect();
    }

    /// Least squares by Householder QR.
    pub fn fit_ols(features: &[f64], dim: usize, targets: &[f64], degree: usize) -> Result<Self> {
        let mut model = Self::basis(dim, degree);
        let x = model.design(features);
        let p = x.ncols();
        if x.nrows() < p {
            return Err(Error::Singular { family: "ols_poly" });
        }
        let qr = x.qr();
        let r = qr.r();
        let diag_max = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        if (0..p).any(|i| r[(i, i)].abs() <= 1e-10 * diag_max.max(f64::MIN_POSITIVE)) {
            return Err(Error::Singular { family: "ols_poly" });
        }
        let mut qty = DVector::from_column_slice(targets);
        qr.q_tr_mul(&mut qty);
        let rhs = qty.rows(0, p).into_owned();
        let beta = r.solve_upper_triangular(&rhs).ok_or(Error::Singular { family: "ols_poly" })?;
        model.coef = beta.iter().copied().collect();
        Ok(model)
    }

    /// Minimizes `(1/2M)|y - b0 - X b|^2 + (lambda/2)|b|^2`; the intercept is not penalized.
    pub fn fit_ridge(features: &[f64], dim: usize, targets: &[f64], degree: usize, lambda: f64) -> Result<Self> {
        let mut model = Self::basis(dim, degree);
        let c = model.centered(features, targets);
        let m = c.x.nrows() as f64;
        let p = c.x.ncols();
        let mut gram = c.x.tr_mul(&c.x) / m;
        for i in 0..p {
            gram[(i, i)] += lambda;
        }
        let rhs = c.x.tr_mul(&c.y) / m;
        let chol = gram.cholesky().ok_or(Error::Singular { family: "ridge" })?;
        let beta = chol.solve(&rhs);
        model.set_from_centered(beta.as_slice(), &c);
        Ok(model)
    }

    /// Minimizes `(1/2M)|y - b0 - X b|^2 + lambda |b|_1` by cyclic coordinate descent.
    pub fn fit_lasso(
        features: &[f64],
        dim: usize,
        targets: &[f64],
        degree: usize,
        lambda: f64,
        tol: f64,
        max_sweeps: usize,
    ) -> Result<Self> {
        let mut model = Self::basis(dim, degree);
        let c = model.centered(features, targets);
        let m = c.x.nrows() as f64;
        let p = c.x.ncols();
        let norms: Vec<f64> = c.x.column_iter().map(|col| col.norm_squared() / m).collect();
        let mut beta = vec![0.0; p];
        let mut resid = c.y.clone();
        let mut last_change = f64::INFINITY;
        let mut converged = p == 0;
        for _ in 0..max_sweeps {
            if converged {
                break;
            }
            let mut max_change: f64 = 0.0;
            for j in 0..p {
                if norms[j] == 0.0 {
                    continue;
                }
                let col = c.x.column(j);
                let rho = col.dot(&resid) / m + norms[j] * beta[j];
                let next = soft_threshold(rho, lambda) / norms[j];
                let delta = next - beta[j];
                if delta != 0.0 {
                    resid.axpy(-delta, &col, 1.0);
                    beta[j] = next;
                }
                max_change = max_change.max(delta.abs());
            }
            last_change = max_change;
            converged = max_change < tol;
        }
        if !converged {
            return Err(Error::NoConvergence { sweeps: max_sweeps, last_change });
        }
        model.set_from_centered(&beta, &c);
        Ok(model)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (e, c) in self.exponents.iter().zip(&self.coef) {
            let mut v = *c;
            for (k, &p) in e.iter().enumerate() {
                if p > 0 {
                    v *= x[k].powi(p as i32);
                }
            }
            acc += v;
        }
        acc
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}
