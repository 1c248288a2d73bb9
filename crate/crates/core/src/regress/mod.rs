//! Regression models with a uniform fit/predict contract.
//!
//! Every family fits on a [`Dataset`] and returns a [`FittedModel`], an
//! immutable value that predicts one row at a time or in batches and
//! serializes to a self-describing byte record.

mod boost;
mod forest;
mod kdtree;
mod knn;
mod linear;
mod mlp;
mod pca;
mod standardize;

pub use boost::Booster;
pub use forest::Forest;
pub use kdtree::KdTree;
pub use knn::KnnModel;
pub use linear::{monomial_exponents, LinearModel};
pub use mlp::Mlp;
pub use pca::{fit_pca, PcaProjection};
pub use standardize::Standardizer;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training pairs: `M x d` row-major features and `M` targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, targets: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be >= 1"));
        }
        if targets.is_empty() {
            return Err(Error::invalid("dataset needs at least one row"));
        }
        if features.len() != targets.len() * dim {
            return Err(Error::DimensionMismatch { expected: targets.len() * dim, got: features.len() });
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Self { features, dim, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Family-specific hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyperparams {
    Knn {
        k: usize,
    },
    PcaKnn {
        k: usize,
        /// Clamped to the feature dimension at fit time.
        components: usize,
    },
    OlsPoly {
        degree: usize,
    },
    Ridge {
        lambda: f64,
        degree: usize,
    },
    Lasso {
        lambda: f64,
        degree: usize,
        tol: f64,
        max_sweeps: usize,
    },
    RandomForest {
        n_trees: usize,
        max_depth: usize,
        min_samples_leaf: usize,
        /// Features tried per split; `None` means `floor(sqrt(d))`.
        max_features: Option<usize>,
    },
    GradBoost {
        n_iter: usize,
        learning_rate: f64,
        num_leaves: usize,
        min_data_in_leaf: usize,
        lambda_l2: f64,
        bagging_fraction: f64,
        max_bins: usize,
    },
    Mlp {
        hidden: Vec<usize>,
        dropout: f64,
        learning_rate: f64,
        lr_decay: f64,
        batch_size: usize,
        epochs: usize,
        beta1: f64,
        beta2: f64,
        warm_start_noise: f64,
    },
}

/// A model family plus its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hyper: Hyperparams,
    /// Rescale features to zero mean and unit variance before fitting.
    pub standardize: bool,
}

pub const MODEL_NAMES: &[&str] = &[
    "knn",
    "pca_knn",
    "ols_poly",
    "ridge",
    "lasso",
    "random_forest",
    "grad_boost",
    "mlp_shallow",
    "mlp_deep",
];

impl ModelSpec {
    /// Default configuration for a named model at feature dimension `dim`.
    ///
    /// Accepts the canonical names in [`MODEL_NAMES`] plus the aliases
    /// `linear`, `forest`, `lgbm`, `network1` and `network2`.
    pub fn default_for(name: &str, dim: usize) -> Result<Self> {
        let low_dim = dim <= 2;
        let mlp = |hidden: Vec<usize>| Hyperparams::Mlp {
            hidden,
            dropout: 0.1,
            learning_rate: 3e-3,
            lr_decay: 0.97,
            batch_size: 512,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            warm_start_noise: 0.005,
        };
        let (hyper, standardize) = match name {
            "knn" => (Hyperparams::Knn { k: 10 }, true),
            "pca_knn" => (Hyperparams::PcaKnn { k: 10, components: 6 }, true),
            "ols_poly" | "linear" => (Hyperparams::OlsPoly { degree: if dim == 2 { 6 } else { 1 } }, true),
            "ridge" => (Hyperparams::Ridge { lambda: 0.1, degree: 1 }, true),
            "lasso" => (Hyperparams::Lasso { lambda: 0.1, degree: 1, tol: 1e-7, max_sweeps: 10_000 }, true),
            "random_forest" | "forest" => (
                Hyperparams::RandomForest { n_trees: 25, max_depth: 3, min_samples_leaf: 5, max_features: None },
                false,
            ),
            "grad_boost" | "lgbm" => (
                Hyperparams::GradBoost {
                    n_iter: 200,
                    learning_rate: 0.05,
                    num_leaves: 31,
                    min_data_in_leaf: 100,
                    lambda_l2: 0.5,
                    bagging_fraction: 0.8,
                    max_bins: 256,
                },
                false,
            ),
            "mlp_shallow" | "network1" => (mlp(if low_dim { vec![32] } else { vec![128] }), true),
            "mlp_deep" | "network2" => (mlp(if low_dim { vec![32, 16] } else { vec![128, 64] }), true),
            other => {
                return Err(Error::invalid(format!(
                    "unknown model '{other}', expected one of {}",
                    MODEL_NAMES.join(", ")
                )))
            }
        };
        Ok(Self { hyper, standardize })
    }

    pub fn family(&self) -> &'static str {
        match self.hyper {
            Hyperparams::Knn { .. } => "knn",
            Hyperparams::PcaKnn { .. } => "pca_knn",
            Hyperparams::OlsPoly { .. } => "ols_poly",
            Hyperparams::Ridge { .. } => "ridge",
            Hyperparams::Lasso { .. } => "lasso",
            Hyperparams::RandomForest { .. } => "random_forest",
            Hyperparams::GradBoost { .. } => "grad_boost",
            Hyperparams::Mlp { .. } => "mlp",
        }
    }

    /// Short display name; distinguishes shallow and deep networks.
    pub fn label(&self) -> String {
        match &self.hyper {
            Hyperparams::Mlp { hidden, .. } if hidden.len() == 1 => "mlp_shallow".into(),
            Hyperparams::Mlp { hidden, .. } if hidden.len() == 2 => "mlp_deep".into(),
            Hyperparams::Mlp { hidden, .. } => format!("mlp_{}", hidden.len()),
            _ => self.family().into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(format!("{}: {msg}", self.family())));
        match &self.hyper {
            Hyperparams::Knn { k } | Hyperparams::PcaKnn { k, .. } if *k == 0 => bad("k must be >= 1"),
            Hyperparams::PcaKnn { components: 0, .. } => bad("components must be >= 1"),
            Hyperparams::Ridge { lambda, .. } | Hyperparams::Lasso { lambda, .. }
                if !(*lambda >= 0.0 && lambda.is_finite()) =>
            {
                bad("lambda must be finite and >= 0")
            }
            Hyperparams::Lasso { tol, max_sweeps, .. } if !(*tol > 0.0) || *max_sweeps == 0 => {
                bad("tol must be > 0 and max_sweeps >= 1")
            }
            Hyperparams::RandomForest { n_trees, min_samples_leaf, max_features, .. }
                if *n_trees == 0 || *min_samples_leaf == 0 || *max_features == Some(0) =>
            {
                bad("n_trees, min_samples_leaf and max_features must be >= 1")
            }
            Hyperparams::GradBoost { learning_rate, num_leaves, min_data_in_leaf, lambda_l2, bagging_fraction, max_bins, .. }
                if !(*learning_rate > 0.0)
                    || *num_leaves < 2
                    || *min_data_in_leaf == 0
                    || !(*lambda_l2 >= 0.0)
                    || !(*bagging_fraction > 0.0 && *bagging_fraction <= 1.0)
                    || *max_bins < 2 =>
            {
                bad("invalid boosting hyperparameters")
            }
            Hyperparams::Mlp { hidden, dropout, learning_rate, lr_decay, batch_size, epochs, beta1, beta2, warm_start_noise }
                if hidden.is_empty()
                    || hidden.contains(&0)
                    || !(0.0..1.0).contains(dropout)
                    || !(*learning_rate > 0.0)
                    || !(*lr_decay > 0.0 && *lr_decay <= 1.0)
                    || *batch_size == 0
                    || *epochs == 0
                    || !(0.0..1.0).contains(beta1)
                    || !(0.0..1.0).contains(beta2)
                    || !(*warm_start_noise >= 0.0) =>
            {
                bad("invalid network hyperparameters")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum ModelState {
    Knn(KnnModel),
    PcaKnn { projection: Option<PcaProjection>, knn: KnnModel },
    Linear(LinearModel),
    Forest(Forest),
    Boost(Booster),
    Mlp(Mlp),
}

/// A trained regressor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedModel {
    spec: ModelSpec,
    dim: usize,
    standardizer: Option<Standardizer>,
    state: ModelState,
}

const MODEL_MAGIC: &[u8; 8] = b"OSWMODEL";
const MODEL_VERSION: u32 = 1;

/// Fits `spec` on `data`. `warm_start` is only used by the network family, and
/// only when its architecture matches.
pub fn fit(spec: &ModelSpec, data: &Dataset, warm_start: Option<&FittedModel>, seed: u64) -> Result<FittedModel> {
    spec.validate()?;
    let dim = data.dim();
    let standardizer = spec.standardize.then(|| Standardizer::fit(data.features(), dim));
    let scaled;
    let x: &[f64] = match &standardizer {
        Some(s) => {
            scaled = s.transform_rows(data.features());
            &scaled
        }
        None => data.features(),
    };
    let y = data.targets();
    let state = match &spec.hyper {
        Hyperparams::Knn { k } => ModelState::Knn(KnnModel::fit(x, dim, y, *k)?),
        Hyperparams::PcaKnn { k, components } => {
            let components = (*components).min(dim);
            match fit_pca(x, dim, components) {
                Ok(projection) => {
                    let projected = projection.transform_rows(x);
                    ModelState::PcaKnn {
                        knn: KnnModel::fit(&projected, projection.k(), y, *k)?,
                        projection: Some(projection),
                    }
                }
                // Identical rows: every point is equidistant from any query.
                Err(Error::Degenerate(_)) => {
                    ModelState::PcaKnn { projection: None, knn: KnnModel::fit(&[], 0, y, *k)? }
                }
                Err(e) => return Err(e),
            }
        }
        Hyperparams::OlsPoly { degree } => ModelState::Linear(LinearModel::fit_ols(x, dim, y, *degree)?),
        Hyperparams::Ridge { lambda, degree } => {
            ModelState::Linear(LinearModel::fit_ridge(x, dim, y, *degree, *lambda)?)
        }
        Hyperparams::Lasso { lambda, degree, tol, max_sweeps } => {
            ModelState::Linear(LinearModel::fit_lasso(x, dim, y, *degree, *lambda, *tol, *max_sweeps)?)
        }
        Hyperparams::RandomForest { n_trees, max_depth, min_samples_leaf, max_features } => {
            let mtry = max_features.unwrap_or(((dim as f64).sqrt().floor() as usize).max(1)).min(dim);
            ModelState::Forest(Forest::fit(x, dim, y, *n_trees, *max_depth, *min_samples_leaf, mtry, seed))
        }
        Hyperparams::GradBoost {
            n_iter,
            learning_rate,
            num_leaves,
            min_data_in_leaf,
            lambda_l2,
            bagging_fraction,
            max_bins,
        } => ModelState::Boost(Booster::fit(
            x,
            dim,
            y,
            boost::BoostParams {
                n_iter: *n_iter,
                learning_rate: *learning_rate,
                num_leaves: *num_leaves,
                min_data_in_leaf: *min_data_in_leaf,
                lambda_l2: *lambda_l2,
                bagging_fraction: *bagging_fraction,
                max_bins: *max_bins,
            },
            seed,
        )),
        Hyperparams::Mlp { hidden, dropout, learning_rate, lr_decay, batch_size, epochs, beta1, beta2, warm_start_noise } => {
            let init = warm_start.and_then(|w| match &w.state {
                ModelState::Mlp(net) if w.dim == dim && net.hidden() == hidden.as_slice() => Some(net),
                _ => None,
            });
            let params = mlp::TrainParams {
                dropout: *dropout,
                learning_rate: *learning_rate,
                lr_decay: *lr_decay,
                batch_size: *batch_size,
                epochs: *epochs,
                beta1: *beta1,
                beta2: *beta2,
                warm_start_noise: *warm_start_noise,
            };
            ModelState::Mlp(Mlp::fit(x, dim, y, hidden, &params, init, seed))
        }
    };
    Ok(FittedModel { spec: spec.clone(), dim, standardizer, state })
}

impl FittedModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Per-iteration training curve: boosting MSE per round, network loss per
    /// epoch. `None` for other families.
    pub fn training_curve(&self) -> Option<&[f64]> {
        match &self.state {
            ModelState::Boost(b) => Some(b.training_mse()),
            ModelState::Mlp(m) => Some(m.epoch_losses()),
            _ => None,
        }
    }

    pub fn as_mlp(&self) -> Option<&Mlp> {
        match &self.state {
            ModelState::Mlp(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_linear(&self) -> Option<&LinearModel> {
        match &self.state {
            ModelState::Linear(m) => Some(m),
            _ => None,
        }
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    /// Prediction for an already standardized row. `scratch` must hold `dim` values.
    fn predict_scaled(&self, z: &[f64], scratch: &mut Vec<f64>) -> f64 {
        match &self.state {
            ModelState::Knn(m) => m.predict(z),
            ModelState::PcaKnn { projection: Some(p), knn } => {
                scratch.resize(p.k(), 0.0);
                p.transform(z, scratch);
                knn.predict(scratch)
            }
            ModelState::PcaKnn { projection: None, knn } => knn.predict(&[]),
            ModelState::Linear(m) => m.predict(z),
            ModelState::Forest(m) => m.predict(z),
            ModelState::Boost(m) => m.predict(z),
            ModelState::Mlp(m) => m.predict(z),
        }
    }

    fn predict_row(&self, x: &[f64], buf: &mut Vec<f64>, scratch: &mut Vec<f64>) -> f64 {
        match &self.standardizer {
            Some(s) => {
                buf.resize(self.dim, 0.0);
                s.transform(x, buf);
                let z = std::mem::take(buf);
                let v = self.predict_scaled(&z, scratch);
                *buf = z;
                v
            }
            None => self.predict_scaled(x, scratch),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(self.predict_row(x, &mut Vec::new(), &mut Vec::new()))
    }

    /// Row-wise [`FittedModel::predict`] over a `K x d` buffer.
    pub fn batch_predict(&self, xs: &[f64]) -> Result<Vec<f64>> {
        if xs.len() % self.dim != 0 {
            return Err(Error::DimensionMismatch { expected: self.dim, got: xs.len() % self.dim });
        }
        Ok(xs
            .par_chunks(self.dim)
            .map_init(|| (Vec::new(), Vec::new()), |(buf, scratch), x| self.predict_row(x, buf, scratch))
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        bincode::serialize_into(&mut out, self)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MODEL_MAGIC {
            return Err(Error::Format("not a model record".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model record version {version}")));
        }
        Ok(bincode::deserialize(&bytes[12..])?)
    }
}
