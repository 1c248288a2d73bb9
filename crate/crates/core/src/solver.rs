//! Backward induction over the time grid: regression targets, the grid of
//! continuation models, value reconstruction and ensemble persistence.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{one_step_transitions, ProblemSpec, TrajectorySet};
use crate::regress::{fit, Dataset, FittedModel, Hyperparams, ModelSpec};
use crate::rng::{self, purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// One-step transitions averaged per regression target.
    pub m_y: usize,
    pub model_spec: ModelSpec,
    /// Share of trajectories used for fitting; the rest only feed the validation loss.
    pub train_fraction: f64,
    /// Caps continuation estimates at `2 * c0 * (|x| + 1)` when set.
    pub truncation_c0: Option<f64>,
    pub warm_start_mlp: bool,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(model_spec: ModelSpec, seed: u64) -> Self {
        Self { m_y: 1, model_spec, train_fraction: 0.9, truncation_c0: None, warm_start_mlp: true, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_y == 0 {
            return Err(Error::invalid("m_y must be >= 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::invalid(format!("train_fraction must be in (0, 1], got {}", self.train_fraction)));
        }
        if let Some(c0) = self.truncation_c0 {
            if !(c0 > 0.0 && c0.is_finite()) {
                return Err(Error::invalid("truncation_c0 must be positive"));
            }
        }
        self.model_spec.validate()
    }
}

/// `f_j(t, x) dt - c_ij(t, x)`: the reward collected over one step when
/// moving from mode `i` into mode `j` at `(t, x)`.
#[inline]
pub fn step_reward(spec: &ProblemSpec, dt: f64, t: f64, x: &[f64], i: usize, j: usize) -> f64 {
    spec.payoff(j, t, x) * dt - spec.switch_cost(i, j, t, x)
}

/// `min(r, 2 c0 (|x| + 1))`.
#[inline]
pub fn truncate(r: f64, c0: f64, x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    r.min(2.0 * c0 * (norm + 1.0))
}

/// Trained continuation models `R_{n,j}` for `n < N` and every mode `j`.
#[derive(Clone, Debug)]
pub struct ValueEnsemble {
    spec_id: String,
    n_steps: usize,
    n_modes: usize,
    dim: usize,
    config: SolverConfig,
    models: Vec<Option<Vec<FittedModel>>>,
}

impl ValueEnsemble {
    /// An ensemble with no models yet.
    pub fn empty(spec: &ProblemSpec, config: SolverConfig) -> Self {
        Self {
            spec_id: spec.id().to_string(),
            n_steps: spec.grid().n_steps(),
            n_modes: spec.n_modes(),
            dim: spec.dim(),
            config,
            models: vec![None; spec.grid().n_steps()],
        }
    }

    /// Installs the `D` models of step `n`.
    pub fn set_step(&mut self, n: usize, models: Vec<FittedModel>) -> Result<()> {
        if n >= self.n_steps {
            return Err(Error::invalid(format!("step {n} out of range for N = {}", self.n_steps)));
        }
        if models.len() != self.n_modes {
            return Err(Error::DimensionMismatch { expected: self.n_modes, got: models.len() });
        }
        if let Some(m) = models.iter().find(|m| m.dim() != self.dim) {
            return Err(Error::DimensionMismatch { expected: self.dim, got: m.dim() });
        }
        self.models[n] = Some(models);
        Ok(())
    }

    pub fn spec_id(&self) -> &str {
        &self.spec_id
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn is_complete(&self) -> bool {
        self.models.iter().all(Option::is_some)
    }

    pub fn model(&self, n: usize, j: usize) -> Result<&FittedModel> {
        self.models
            .get(n)
            .and_then(|s| s.as_ref())
            .and_then(|s| s.get(j))
            .ok_or(Error::MissingModel { step: n, mode: j })
    }

    fn check(&self, spec: &ProblemSpec) -> Result<()> {
        if spec.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: spec.dim() });
        }
        if spec.n_modes() != self.n_modes || spec.grid().n_steps() != self.n_steps {
            return Err(Error::invalid(format!(
                "ensemble has N={}, D={} but problem has N={}, D={}",
                self.n_steps,
                self.n_modes,
                spec.grid().n_steps(),
                spec.n_modes()
            )));
        }
        Ok(())
    }

    /// Continuation estimate `R_j(t_n, x)`, truncated if configured.
    pub fn continuation(&self, n: usize, j: usize, x: &[f64]) -> Result<f64> {
        let r = self.model(n, j)?.predict(x)?;
        Ok(match self.config.truncation_c0 {
            Some(c0) => truncate(r, c0, x),
            None => r,
        })
    }

    /// Continuations of every mode at step `n` for a `K x d` batch, as `K x D`.
    pub fn continuations(&self, n: usize, xs: &[f64]) -> Result<Vec<f64>> {
        let dm = self.n_modes;
        let k = xs.len() / self.dim.max(1);
        let mut out = vec![0.0; k * dm];
        for j in 0..dm {
            let col = self.model(n, j)?.batch_predict(xs)?;
            for (row, v) in col.into_iter().enumerate() {
                out[row * dm + j] = v;
            }
        }
        if let Some(c0) = self.config.truncation_c0 {
            for (row, x) in xs.chunks_exact(self.dim).enumerate() {
                for v in &mut out[row * dm..(row + 1) * dm] {
                    *v = truncate(*v, c0, x);
                }
            }
        }
        Ok(out)
    }
}

/// `max_j [f_j dt - c_ij + R_j]` given the continuations `r` of every mode.
#[inline]
pub fn reconstruct_from(spec: &ProblemSpec, dt: f64, t: f64, x: &[f64], i: usize, r: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (j, rj) in r.iter().enumerate() {
        let v = step_reward(spec, dt, t, x, i, j) + rj;
        if v > best {
            best = v;
        }
    }
    best
}

/// `V_i(t_n, x)`; zero at the final grid point.
pub fn reconstruct_value(ens: &ValueEnsemble, spec: &ProblemSpec, i: usize, n: usize, x: &[f64]) -> Result<f64> {
    ens.check(spec)?;
    if i >= ens.n_modes {
        return Err(Error::invalid(format!("mode {i} out of range for D = {}", ens.n_modes)));
    }
    if x.len() != ens.dim {
        return Err(Error::DimensionMismatch { expected: ens.dim, got: x.len() });
    }
    if n > ens.n_steps {
        return Err(Error::invalid(format!("step {n} beyond horizon {}", ens.n_steps)));
    }
    if n == ens.n_steps {
        return Ok(0.0);
    }
    let r: Vec<f64> = (0..ens.n_modes).map(|j| ens.continuation(n, j, x)).collect::<Result<_>>()?;
    Ok(reconstruct_from(spec, spec.grid().dt(), spec.grid().time(n), x, i, &r))
}

/// `V_i(t_n, x)` for every mode `i` over a `K x d` batch, as `K x D`.
pub fn reconstruct_all(ens: &ValueEnsemble, spec: &ProblemSpec, n: usize, xs: &[f64]) -> Result<Vec<f64>> {
    ens.check(spec)?;
    let dm = ens.n_modes;
    let k = xs.len() / ens.dim;
    if n == ens.n_steps {
        return Ok(vec![0.0; k * dm]);
    }
    let r = ens.continuations(n, xs)?;
    let (dt, t) = (spec.grid().dt(), spec.grid().time(n));
    let mut out = vec![0.0; k * dm];
    out.par_chunks_mut(dm).zip(xs.par_chunks(ens.dim)).zip(r.par_chunks(dm)).for_each(|((dst, x), rk)| {
        for (i, v) in dst.iter_mut().enumerate() {
            *v = reconstruct_from(spec, dt, t, x, i, rk);
        }
    });
    Ok(out)
}

fn average_replicates(values: &[f64], k: usize, m_y: usize, dm: usize) -> Vec<f64> {
    // values: (k * m_y) x dm, replicate-major within each source state
    let mut out = vec![0.0; k * dm];
    for s in 0..k {
        for j in 0..dm {
            let mut acc = 0.0;
            for r in 0..m_y {
                acc += values[(s * m_y + r) * dm + j];
            }
            out[s * dm + j] = acc / m_y as f64;
        }
    }
    out
}

fn check_step(spec: &ProblemSpec, n: usize, m_y: usize) -> Result<()> {
    if n >= spec.grid().n_steps() {
        return Err(Error::invalid(format!("target step {n} must be < N = {}", spec.grid().n_steps())));
    }
    if m_y == 0 {
        return Err(Error::invalid("m_y must be >= 1"));
    }
    Ok(())
}

/// Regression targets for all modes at step `n`, as `K x D`:
/// `Y_j = (1/m_y) sum_r V_j(t_{n+1}, X~_r)` over fresh one-step transitions.
pub fn build_targets_all(
    spec: &ProblemSpec,
    ens: &ValueEnsemble,
    states: &[f64],
    n: usize,
    m_y: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let k = states.len() / spec.dim();
    let dm = spec.n_modes();
    check_step(spec, n, m_y)?;
    if n + 1 == spec.grid().n_steps() {
        return Ok(vec![0.0; k * dm]);
    }
    let next = one_step_transitions(spec, states, n, m_y, seed)?;
    let values = reconstruct_all(ens, spec, n + 1, &next)?;
    Ok(average_replicates(&values, k, m_y, dm))
}

/// Regression targets for mode `j` alone; see [`build_targets_all`].
pub fn build_targets(
    spec: &ProblemSpec,
    ens: &ValueEnsemble,
    states: &[f64],
    n: usize,
    j: usize,
    m_y: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if j >= spec.n_modes() {
        return Err(Error::invalid(format!("mode {j} out of range for D = {}", spec.n_modes())));
    }
    let k = states.len() / spec.dim();
    check_step(spec, n, m_y)?;
    if n + 1 == spec.grid().n_steps() {
        return Ok(vec![0.0; k]);
    }
    let next = one_step_transitions(spec, states, n, m_y, seed)?;
    let (dt, t) = (spec.grid().dt(), spec.grid().time(n + 1));
    let d = spec.dim();
    let mut out = Vec::with_capacity(k);
    for s in 0..k {
        let mut acc = 0.0;
        for r in 0..m_y {
            let x = &next[(s * m_y + r) * d..(s * m_y + r + 1) * d];
            let cont: Vec<f64> = (0..spec.n_modes()).map(|i| ens.continuation(n + 1, i, x)).collect::<Result<_>>()?;
            acc += reconstruct_from(spec, dt, t, x, j, &cont);
        }
        out.push(acc / m_y as f64);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub step: usize,
    pub mode: usize,
    pub train_mse: f64,
    /// `None` when every trajectory is used for training.
    pub val_mse: Option<f64>,
}

/// Per-(step, mode) regression losses, ordered by step then mode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub entries: Vec<LossEntry>,
}

impl LossCurve {
    /// CSV with columns `time_step, mode, train_loss, val_loss`; modes are 1-based.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time_step", "mode", "train_loss", "val_loss"])?;
        for e in &self.entries {
            w.write_record([
                e.step.to_string(),
                (e.mode + 1).to_string(),
                e.train_mse.to_string(),
                e.val_mse.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Seeded shuffle of trajectory indices into sorted train and validation sets.
pub fn split_indices(m: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut rng::stream(rng::derive_seed(seed, &[purpose::SPLIT]), 0));
    let n_train = ((train_fraction * m as f64).round() as usize).clamp(1, m);
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn gather_rows(all: &[f64], width: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&all[r * width..(r + 1) * width]);
    }
    out
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / pred.len() as f64
}

/// Fits the continuation models backwards from `t_{N-1}` to `t_0`.
pub fn backward_solve(
    spec: &ProblemSpec,
    paths: &TrajectorySet,
    config: &SolverConfig,
) -> Result<(ValueEnsemble, LossCurve)> {
    config.validate()?;
    let big_n = spec.grid().n_steps();
    if paths.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: paths.dim() });
    }
    if paths.n_steps() != big_n {
        return Err(Error::invalid(format!(
            "trajectories have N={} but the problem has N={big_n}",
            paths.n_steps()
        )));
    }
    let d = spec.dim();
    let dm = spec.n_modes();
    let (train, val) = split_indices(paths.n_paths(), config.train_fraction, config.seed);
    let warm = config.warm_start_mlp && matches!(config.model_spec.hyper, Hyperparams::Mlp { .. });

    let mut ens = ValueEnsemble::empty(spec, config.clone());
    let mut curve = Vec::with_capacity(big_n * dm);
    for n in (0..big_n).rev() {
        let step_start = Instant::now();
        let states = paths.states_at(n);
        let step_seed = rng::derive_seed(config.seed, &[purpose::STEP, n as u64]);
        let targets = build_targets_all(spec, &ens, &states, n, config.m_y, step_seed)?;
        let x_train = gather_rows(&states, d, &train);
        let x_val = gather_rows(&states, d, &val);

        let fitted: Vec<(FittedModel, LossEntry)> = (0..dm)
            .into_par_iter()
            .map(|j| {
                let started = Instant::now();
                let column = |rows: &[usize]| rows.iter().map(|&r| targets[r * dm + j]).collect::<Vec<_>>();
                let (y_train, y_val) = (column(&train), column(&val));
                let wrap = |e: Error| Error::Fit { step: n, mode: j, source: Box::new(e) };
                let data = Dataset::new(x_train.clone(), d, y_train.clone()).map_err(wrap)?;
                let prev = if warm && n + 1 < big_n { Some(ens.model(n + 1, j)?) } else { None };
                let fit_seed = rng::derive_seed(config.seed, &[purpose::FIT, n as u64, j as u64]);
                let model = fit(&config.model_spec, &data, prev, fit_seed).map_err(wrap)?;
                let train_mse = mse(&model.batch_predict(&x_train)?, &y_train);
                let val_mse = if val.is_empty() { None } else { Some(mse(&model.batch_predict(&x_val)?, &y_val)) };
                log::info!(
                    "step {n} mode {j}: fit {:.3}s, train mse {train_mse:.6e}",
                    started.elapsed().as_secs_f64()
                );
                Ok((model, LossEntry { step: n, mode: j, train_mse, val_mse }))
            })
            .collect::<Result<_>>()?;
        let (models, losses): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
        ens.set_step(n, models)?;
        curve.extend(losses);
        log::debug!("step {n} done in {:.3}s", step_start.elapsed().as_secs_f64());
    }
    curve.sort_by_key(|e| (e.step, e.mode));
    Ok((ens, LossCurve { entries: curve }))
}

const ENSEMBLE_MAGIC: &[u8; 8] = b"OSWENSMB";
const ENSEMBLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EnsembleFile {
    spec_id: String,
    n_steps: usize,
    n_modes: usize,
    dim: usize,
    config: SolverConfig,
    records: Vec<Option<Vec<Vec<u8>>>>,
}

pub fn save_ensemble(ens: &ValueEnsemble, path: &Path) -> Result<()> {
    let records = ens
        .models
        .iter()
        .map(|step| step.as_ref().map(|ms| ms.iter().map(FittedModel::to_bytes).collect::<Result<Vec<_>>>()).transpose())
        .collect::<Result<Vec<_>>>()?;
    let file = EnsembleFile {
        spec_id: ens.spec_id.clone(),
        n_steps: ens.n_steps,
        n_modes: ens.n_modes,
        dim: ens.dim,
        config: ens.config.clone(),
        records,
    };
    let mut bytes = Vec::new();
    bytes.extend_from_slice(ENSEMBLE_MAGIC);
    bytes.extend_from_slice(&ENSEMBLE_VERSION.to_le_bytes());
    bincode::serialize_into(&mut bytes, &file)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_ensemble(path: &Path) -> Result<ValueEnsemble> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..8] != ENSEMBLE_MAGIC {
        return Err(Error::Format(format!("{} is not an ensemble file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != ENSEMBLE_VERSION {
        return Err(Error::Format(format!("unsupported ensemble version {version}")));
    }
    let file: EnsembleFile = bincode::deserialize(&bytes[12..])?;
    if file.records.len() != file.n_steps {
        return Err(Error::Format("ensemble step count disagrees with header".into()));
    }
    let models = file
        .records
        .into_iter()
        .map(|step| {
            step.map(|recs| {
                if recs.len() != file.n_modes {
                    return Err(Error::Format("ensemble mode count disagrees with header".into()));
                }
                recs.iter().map(|b| FittedModel::from_bytes(b)).collect::<Result<Vec<_>>>()
            })
            .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValueEnsemble {
        spec_id: file.spec_id,
        n_steps: file.n_steps,
        n_modes: file.n_modes,
        dim: file.dim,
        config: file.config,
        models,
    })
}
