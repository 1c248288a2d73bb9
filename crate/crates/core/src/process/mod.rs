//! Optimal switching problem instances and their discretized jump-diffusion
//! dynamics.

mod io;
mod problems;

pub use io::{read_trajectories, write_trajectories, write_trajectories_csv, TrajectoryMeta};
pub use problems::{
    make_aclp, make_bsp, make_cl, make_hcl, make_jump_lab, make_ou_lab, AclpParams, Seasonal,
};

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, purpose, StreamRng};

/// Uniform decision grid `t_start = t_0 < ... < t_N = t_end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) || t_end <= t_start {
            return Err(Error::invalid(format!(
                "time grid needs t_end > t_start, got [{t_start}, {t_end}]"
            )));
        }
        if n_steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(Self { t_start, t_end, n_steps })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    /// Grid time `t_n`. The last point is `t_end` exactly.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps {
            return self.t_end;
        }
        self.t_start + (self.t_end - self.t_start) * (n as f64 / self.n_steps as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpApplication {
    /// The coordinate receives `sum(e^Y - 1)` additively.
    AdditiveTransformed,
    /// The coordinate is scaled by `1 + sum(e^Y - 1)`.
    Multiplicative,
}

/// Compound Poisson jumps with exponentially distributed log-sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    pub intensity: f64,
    pub size_rate: f64,
    pub affected_dims: Vec<usize>,
    pub application: JumpApplication,
}

impl JumpSpec {
    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.intensity >= 0.0 && self.intensity.is_finite()) {
            return Err(Error::invalid("jump intensity must be finite and >= 0"));
        }
        if !(self.size_rate > 0.0 && self.size_rate.is_finite()) {
            return Err(Error::invalid("jump size rate must be > 0"));
        }
        if let Some(&bad) = self.affected_dims.iter().find(|&&k| k >= dim) {
            return Err(Error::invalid(format!("jump dimension {bad} out of range for d={dim}")));
        }
        Ok(())
    }

    /// Mean of one jump's impact `e^Y - 1` for `Y ~ Exp(size_rate)`.
    pub fn mean_impact(&self) -> f64 {
        if self.size_rate > 1.0 {
            1.0 / (self.size_rate - 1.0)
        } else {
            f64::INFINITY
        }
    }
}

pub type DriftFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
/// Writes the row-major `d x d` diffusion matrix.
pub type DiffusionFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
pub type PayoffFn = dyn Fn(usize, f64, &[f64]) -> f64 + Send + Sync;
pub type CostFn = dyn Fn(usize, usize, f64, &[f64]) -> f64 + Send + Sync;
pub type InitialFn = dyn Fn(&mut StreamRng, &mut [f64]) + Send + Sync;

/// A complete optimal switching instance.
///
/// Modes are 0-based throughout the library API.
#[derive(Clone)]
pub struct ProblemSpec {
    id: String,
    dim: usize,
    n_modes: usize,
    grid: TimeGrid,
    jump: Option<JumpSpec>,
    drift: Option<Arc<DriftFn>>,
    diffusion: Option<Arc<DiffusionFn>>,
    payoff: Arc<PayoffFn>,
    switch_cost: Arc<CostFn>,
    initial: Arc<InitialFn>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("n_modes", &self.n_modes)
            .field("grid", &self.grid)
            .field("jump", &self.jump)
            .finish_non_exhaustive()
    }
}

pub struct ProblemBuilder {
    id: String,
    dim: usize,
    n_modes: usize,
    grid: TimeGrid,
    jump: Option<JumpSpec>,
    drift: Option<Arc<DriftFn>>,
    diffusion: Option<Arc<DiffusionFn>>,
    payoff: Option<Arc<PayoffFn>>,
    switch_cost: Option<Arc<CostFn>>,
    initial: Option<Arc<InitialFn>>,
}

impl ProblemBuilder {
    pub fn drift(mut self, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(f));
        self
    }

    pub fn diffusion(mut self, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.diffusion = Some(Arc::new(f));
        self
    }

    pub fn jump(mut self, jump: JumpSpec) -> Self {
        self.jump = Some(jump);
        self
    }

    pub fn payoff(mut self, f: impl Fn(usize, f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.payoff = Some(Arc::new(f));
        self
    }

    pub fn switch_cost(
        mut self,
        f: impl Fn(usize, usize, f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.switch_cost = Some(Arc::new(f));
        self
    }

    pub fn initial(mut self, f: impl Fn(&mut StreamRng, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.initial = Some(Arc::new(f));
        self
    }

    /// Deterministic starting point.
    pub fn initial_point(self, x0: Vec<f64>) -> Self {
        self.initial(move |_, out| out.copy_from_slice(&x0))
    }

    pub fn build(self) -> Result<ProblemSpec> {
        if self.dim == 0 {
            return Err(Error::invalid("state dimension must be >= 1"));
        }
        if self.n_modes == 0 {
            return Err(Error::invalid("need at least one mode"));
        }
        if let Some(j) = &self.jump {
            j.validate(self.dim)?;
        }
        let payoff = self.payoff.ok_or_else(|| Error::invalid("payoff function missing"))?;
        let switch_cost = self
            .switch_cost
            .ok_or_else(|| Error::invalid("switching cost function missing"))?;
        let initial = self
            .initial
            .unwrap_or_else(|| Arc::new(|_: &mut StreamRng, out: &mut [f64]| out.fill(0.0)));
        Ok(ProblemSpec {
            id: self.id,
            dim: self.dim,
            n_modes: self.n_modes,
            grid: self.grid,
            jump: self.jump.filter(|j| j.intensity > 0.0 && !j.affected_dims.is_empty()),
            drift: self.drift,
            diffusion: self.diffusion,
            payoff,
            switch_cost,
            initial,
        })
    }
}

impl ProblemSpec {
    pub fn builder(id: impl Into<String>, dim: usize, n_modes: usize, grid: TimeGrid) -> ProblemBuilder {
        ProblemBuilder {
            id: id.into(),
            dim,
            n_modes,
            grid,
            jump: None,
            drift: None,
            diffusion: None,
            payoff: None,
            switch_cost: None,
            initial: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn jump(&self) -> Option<&JumpSpec> {
        self.jump.as_ref()
    }

    pub fn has_diffusion(&self) -> bool {
        self.diffusion.is_some()
    }

    /// Copy of this spec with a different grid (same horizon semantics are up to the caller).
    pub fn with_grid(&self, grid: TimeGrid) -> Self {
        let mut s = self.clone();
        s.grid = grid;
        s
    }

    /// Copy of this spec with a new identifier.
    pub fn with_id(&self, id: impl Into<String>) -> Self {
        let mut s = self.clone();
        s.id = id.into();
        s
    }

    /// Copy of this spec without jumps.
    pub fn without_jumps(&self) -> Self {
        let mut s = self.clone();
        s.jump = None;
        s
    }

    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.drift {
            Some(f) => f(t, x, out),
            None => out.fill(0.0),
        }
    }

    pub fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.diffusion {
            Some(f) => f(t, x, out),
            None => out.fill(0.0),
        }
    }

    #[inline]
    pub fn payoff(&self, mode: usize, t: f64, x: &[f64]) -> f64 {
        (self.payoff)(mode, t, x)
    }

    #[inline]
    pub fn switch_cost(&self, from: usize, to: usize, t: f64, x: &[f64]) -> f64 {
        (self.switch_cost)(from, to, t, x)
    }

    pub fn sample_initial(&self, rng: &mut StreamRng, out: &mut [f64]) {
        (self.initial)(rng, out)
    }

    fn check_state_dim(&self, len: usize) -> Result<usize> {
        if len % self.dim != 0 {
            return Err(Error::DimensionMismatch { expected: self.dim, got: len % self.dim });
        }
        Ok(len / self.dim)
    }
}

/// Euler-Maruyama step with per-step compound Poisson jumps.
struct Stepper<'a> {
    spec: &'a ProblemSpec,
    dt: f64,
    sqrt_dt: f64,
    poisson: Option<Poisson<f64>>,
    sizes: Option<Exp<f64>>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    z: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a ProblemSpec) -> Self {
        let dt = spec.grid.dt();
        let d = spec.dim;
        let (poisson, sizes) = match &spec.jump {
            Some(j) => (
                Poisson::new(j.intensity * dt).ok(),
                Exp::new(j.size_rate).ok(),
            ),
            None => (None, None),
        };
        Self {
            spec,
            dt,
            sqrt_dt: dt.sqrt(),
            poisson,
            sizes,
            drift: vec![0.0; d],
            sigma: vec![0.0; d * d],
            z: vec![0.0; d],
        }
    }

    /// Advances `x` from grid step `n` to `n + 1`, writing into `out`.
    /// Jump counts per affected dimension are appended to `counts` if given.
    fn step(
        &mut self,
        n: usize,
        x: &[f64],
        out: &mut [f64],
        rng: &mut StreamRng,
        mut counts: Option<&mut Vec<u32>>,
    ) -> bool {
        let spec = self.spec;
        let d = spec.dim;
        let t = spec.grid.time(n);
        spec.drift(t, x, &mut self.drift);
        for i in 0..d {
            out[i] = x[i] + self.drift[i] * self.dt;
        }
        if let Some(diffusion) = &spec.diffusion {
            diffusion(t, x, &mut self.sigma);
            for zi in self.z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for i in 0..d {
                let row = &self.sigma[i * d..(i + 1) * d];
                let mut acc = 0.0;
                for (s, z) in row.iter().zip(&self.z) {
                    acc += s * z;
                }
                out[i] += acc * self.sqrt_dt;
            }
        }
        if let (Some(jump), Some(poisson), Some(sizes)) = (&spec.jump, &self.poisson, &self.sizes) {
            for &k in &jump.affected_dims {
                let count = poisson.sample(rng) as u32;
                let mut impact = 0.0;
                for _ in 0..count {
                    let y: f64 = sizes.sample(rng);
                    impact += y.exp_m1();
                }
                match jump.application {
                    JumpApplication::AdditiveTransformed => out[k] += impact,
                    JumpApplication::Multiplicative => out[k] *= 1.0 + impact,
                }
                if let Some(c) = counts.as_deref_mut() {
                    c.push(count);
                }
            }
        }
        out.iter().all(|v| v.is_finite())
    }
}

/// `M` simulated paths on the `N + 1` grid points.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    spec_id: String,
    seed: u64,
    n_paths: usize,
    n_steps: usize,
    dim: usize,
    states: Vec<f64>,
}

impl TrajectorySet {
    pub fn from_raw(
        spec_id: impl Into<String>,
        seed: u64,
        n_paths: usize,
        n_steps: usize,
        dim: usize,
        states: Vec<f64>,
    ) -> Result<Self> {
        if states.len() != n_paths * (n_steps + 1) * dim {
            return Err(Error::Format(format!(
                "trajectory buffer has {} values, expected {}x{}x{}",
                states.len(),
                n_paths,
                n_steps + 1,
                dim
            )));
        }
        if let Some(pos) = states.iter().position(|v| !v.is_finite()) {
            let per_path = (n_steps + 1) * dim;
            return Err(Error::NonFiniteState { path: pos / per_path, step: (pos % per_path) / dim });
        }
        Ok(Self { spec_id: spec_id.into(), seed, n_paths, n_steps, dim, states })
    }

    pub fn spec_id(&self) -> &str {
        &self.spec_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Flat row-major `M x (N+1) x d` buffer.
    pub fn as_slice(&self) -> &[f64] {
        &self.states
    }

    /// All `N + 1` states of path `s`, flattened.
    pub fn path(&self, s: usize) -> &[f64] {
        let len = (self.n_steps + 1) * self.dim;
        &self.states[s * len..(s + 1) * len]
    }

    pub fn state(&self, s: usize, n: usize) -> &[f64] {
        let start = (s * (self.n_steps + 1) + n) * self.dim;
        &self.states[start..start + self.dim]
    }

    /// States of every path at step `n`, as an `M x d` buffer.
    pub fn states_at(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_paths * self.dim);
        for s in 0..self.n_paths {
            out.extend_from_slice(self.state(s, n));
        }
        out
    }

    /// Keeps only the paths with the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut states = Vec::with_capacity(indices.len() * (self.n_steps + 1) * self.dim);
        for &s in indices {
            states.extend_from_slice(self.path(s));
        }
        Self { states, n_paths: indices.len(), ..self.clone() }
    }
}

fn path_stream_key(seed: u64) -> u64 {
    rng::derive_seed(seed, &[purpose::PATHS])
}

fn simulate_one(
    spec: &ProblemSpec,
    key: u64,
    s: usize,
    last_step: usize,
    buf: &mut [f64],
    mut counts: Option<&mut Vec<u32>>,
) -> Result<()> {
    let d = spec.dim;
    let mut rng = rng::stream(key, s as u64);
    spec.sample_initial(&mut rng, &mut buf[..d]);
    if !buf[..d].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteState { path: s, step: 0 });
    }
    let mut stepper = Stepper::new(spec);
    for n in 0..last_step {
        let (head, tail) = buf.split_at_mut((n + 1) * d);
        let x = &head[n * d..];
        if !stepper.step(n, x, &mut tail[..d], &mut rng, counts.as_deref_mut()) {
            return Err(Error::NonFiniteState { path: s, step: n + 1 });
        }
    }
    Ok(())
}

fn first_error(results: Vec<Result<()>>) -> Result<()> {
    results.into_iter().collect()
}

/// Simulates `m` independent trajectories over the whole grid.
pub fn simulate_paths(spec: &ProblemSpec, m: usize, seed: u64) -> Result<TrajectorySet> {
    if m == 0 {
        return Err(Error::invalid("need at least one trajectory"));
    }
    let n_steps = spec.grid.n_steps;
    let per_path = (n_steps + 1) * spec.dim;
    let mut states = vec![0.0; m * per_path];
    let key = path_stream_key(seed);
    let results: Vec<Result<()>> = states
        .par_chunks_mut(per_path)
        .enumerate()
        .map(|(s, buf)| simulate_one(spec, key, s, n_steps, buf, None))
        .collect();
    first_error(results)?;
    Ok(TrajectorySet {
        spec_id: spec.id.clone(),
        seed,
        n_paths: m,
        n_steps,
        dim: spec.dim,
        states,
    })
}

/// Per-step jump counts recorded during simulation, indexed
/// `[path][step][affected dim]`.
#[derive(Clone, Debug)]
pub struct JumpCounts {
    pub n_steps: usize,
    pub n_dims: usize,
    pub counts: Vec<u32>,
}

/// Same trajectories as [`simulate_paths`] plus the jump counts drawn along the way.
pub fn simulate_paths_with_jumps(
    spec: &ProblemSpec,
    m: usize,
    seed: u64,
) -> Result<(TrajectorySet, JumpCounts)> {
    if m == 0 {
        return Err(Error::invalid("need at least one trajectory"));
    }
    let n_steps = spec.grid.n_steps;
    let n_dims = spec.jump.as_ref().map_or(0, |j| j.affected_dims.len());
    let per_path = (n_steps + 1) * spec.dim;
    let key = path_stream_key(seed);
    let mut states = vec![0.0; m * per_path];
    let mut counts = Vec::with_capacity(m * n_steps * n_dims);
    for (s, buf) in states.chunks_mut(per_path).enumerate() {
        simulate_one(spec, key, s, n_steps, buf, Some(&mut counts))?;
    }
    let set = TrajectorySet { spec_id: spec.id.clone(), seed, n_paths: m, n_steps, dim: spec.dim, states };
    Ok((set, JumpCounts { n_steps, n_dims, counts }))
}

/// States at grid step `step` of the first `m` trajectories generated by
/// [`simulate_paths`] with the same seed, without simulating past `step`.
pub fn simulate_states_at(spec: &ProblemSpec, m: usize, step: usize, seed: u64) -> Result<Vec<f64>> {
    if step > spec.grid.n_steps {
        return Err(Error::invalid(format!("step {step} beyond horizon {}", spec.grid.n_steps)));
    }
    let d = spec.dim;
    let key = path_stream_key(seed);
    let per_path = (step + 1) * d;
    let mut out = vec![0.0; m * d];
    let results: Vec<Result<()>> = out
        .par_chunks_mut(d)
        .enumerate()
        .map(|(s, dst)| {
            let mut buf = vec![0.0; per_path];
            simulate_one(spec, key, s, step, &mut buf, None)?;
            dst.copy_from_slice(&buf[step * d..]);
            Ok(())
        })
        .collect();
    first_error(results)?;
    Ok(out)
}

/// Independent one-step transitions from each of the `K` given states at step
/// `step`. Output layout is `K x m_y x d`.
///
/// Replicate `r` of source state `k` draws from its own stream, keyed by
/// [`rng::replicate_seed`]`(seed, r)`.
pub fn one_step_transitions(
    spec: &ProblemSpec,
    states: &[f64],
    step: usize,
    m_y: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if step >= spec.grid.n_steps {
        return Err(Error::invalid(format!(
            "transition step {step} must be < N = {}",
            spec.grid.n_steps
        )));
    }
    if m_y == 0 {
        return Err(Error::invalid("m_y must be >= 1"));
    }
    let d = spec.dim;
    let k_states = spec.check_state_dim(states.len())?;
    let keys: Vec<u64> = (0..m_y)
        .map(|r| rng::derive_seed(rng::replicate_seed(seed, r), &[purpose::TRANSITIONS]))
        .collect();
    let mut out = vec![0.0; k_states * m_y * d];
    let results: Vec<Result<()>> = out
        .par_chunks_mut(m_y * d)
        .enumerate()
        .map_init(
            || Stepper::new(spec),
            |stepper, (k, dst)| {
                let x = &states[k * d..(k + 1) * d];
                for (r, key) in keys.iter().enumerate() {
                    let mut rng = rng::stream(*key, k as u64);
                    if !stepper.step(step, x, &mut dst[r * d..(r + 1) * d], &mut rng, None) {
                        return Err(Error::NonFiniteState { path: k, step: step + 1 });
                    }
                }
                Ok(())
            },
        )
        .collect();
    first_error(results)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum CostViolationKind {
    /// `c_ii != 0`
    NonzeroDiagonal { mode: usize, cost: f64 },
    /// `c_ij <= 0` for `i != j`
    NonPositive { from: usize, to: usize, cost: f64 },
    /// `c_ij + c_jk < c_ik`
    Triangle { i: usize, j: usize, k: usize, via: f64, direct: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostViolation {
    pub state_index: usize,
    pub time: f64,
    pub kind: CostViolationKind,
}

#[derive(Clone, Debug, Default)]
pub struct CostReport {
    pub checked_states: usize,
    pub violations: Vec<CostViolation>,
}

impl CostReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the switching cost axioms (zero diagonal, positive off-diagonal,
/// triangle inequality over distinct triples) on every sample state, at the
/// first, middle and last grid times.
///
/// The triangle check allows a relative slack of 1e-12 for rounding.
pub fn validate_costs(spec: &ProblemSpec, sample_states: &[f64]) -> Result<CostReport> {
    let d = spec.dim;
    let n_states = spec.check_state_dim(sample_states.len())?;
    if n_states == 0 {
        return Err(Error::invalid("validate_costs needs at least one sample state"));
    }
    let g = spec.grid;
    let times = [g.time(0), g.time(g.n_steps / 2), g.time(g.n_steps)];
    let dm = spec.n_modes;
    let mut report = CostReport { checked_states: n_states, violations: Vec::new() };
    let mut c = vec![0.0; dm * dm];
    for (idx, x) in sample_states.chunks_exact(d).enumerate() {
        for &t in &times {
            for i in 0..dm {
                for j in 0..dm {
                    c[i * dm + j] = spec.switch_cost(i, j, t, x);
                }
            }
            let mut push = |kind| report.violations.push(CostViolation { state_index: idx, time: t, kind });
            for i in 0..dm {
                let cii = c[i * dm + i];
                if cii != 0.0 {
                    push(CostViolationKind::NonzeroDiagonal { mode: i, cost: cii });
                }
                for j in 0..dm {
                    let cij = c[i * dm + j];
                    if i != j && !(cij > 0.0) {
                        push(CostViolationKind::NonPositive { from: i, to: j, cost: cij });
                    }
                }
            }
            for i in 0..dm {
                for j in 0..dm {
                    for k in 0..dm {
                        if i == j || j == k || i == k {
                            continue;
                        }
                        let via = c[i * dm + j] + c[j * dm + k];
                        let direct = c[i * dm + k];
                        if via < direct - 1e-12 * direct.abs().max(1.0) {
                            push(CostViolationKind::Triangle { i, j, k, via, direct });
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(dim: usize, x0: Vec<f64>) -> ProblemSpec {
        ProblemSpec::builder("still", dim, 1, TimeGrid::new(0.0, 1.0, 10).unwrap())
            .payoff(|_, _, _| 0.0)
            .switch_cost(|_, _, _, _| 0.0)
            .initial_point(x0)
            .build()
            .unwrap()
    }

    #[test]
    fn grid_endpoints() {
        let g = TimeGrid::new(0.0, 0.25, 180).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(180), 0.25);
        assert_eq!(g.dt() * 180.0, 0.25);
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn zero_dynamics_paths_are_constant() {
        let spec = still(2, vec![1.0, 2.0]);
        let set = simulate_paths(&spec, 5, 3).unwrap();
        assert!(set.as_slice().chunks(2).all(|x| x == [1.0, 2.0]));
    }

    #[test]
    fn constant_drift_is_exact() {
        let spec = ProblemSpec::builder("drift", 1, 1, TimeGrid::new(0.0, 2.0, 8).unwrap())
            .drift(|_, _, out| out[0] = 0.5)
            .payoff(|_, _, _| 0.0)
            .switch_cost(|_, _, _, _| 0.0)
            .initial_point(vec![1.0])
            .build()
            .unwrap();
        let set = simulate_paths(&spec, 2, 0).unwrap();
        assert_eq!(set.state(1, 8), &[2.0]);
    }

    #[test]
    fn zero_dynamics_transitions_replicate_input() {
        let spec = still(2, vec![0.0, 0.0]);
        let states = vec![1.0, 2.0, -3.0, 4.5];
        let out = one_step_transitions(&spec, &states, 0, 3, 11).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, -3.0, 4.5, -3.0, 4.5, -3.0, 4.5]);
    }

    #[test]
    fn non_finite_state_reports_location() {
        let spec = ProblemSpec::builder("blowup", 1, 1, TimeGrid::new(0.0, 1.0, 4).unwrap())
            .drift(|t, _, out| out[0] = if t > 0.4 { f64::INFINITY } else { 0.0 })
            .payoff(|_, _, _| 0.0)
            .switch_cost(|_, _, _, _| 0.0)
            .build()
            .unwrap();
        match simulate_paths(&spec, 3, 0) {
            Err(Error::NonFiniteState { path: 0, step: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn states_at_matches_full_simulation() {
        let spec = make_cl();
        let full = simulate_paths(&spec, 7, 5).unwrap();
        let partial = simulate_states_at(&spec, 7, 40, 5).unwrap();
        assert_eq!(partial, full.states_at(40));
    }

    #[test]
    fn transition_step_bounds() {
        let spec = still(1, vec![0.0]);
        assert!(one_step_transitions(&spec, &[0.0], 10, 1, 0).is_err());
        assert!(one_step_transitions(&spec, &[0.0], 0, 0, 0).is_err());
        assert!(one_step_transitions(&spec, &[0.0, 1.0, 2.0], 0, 1, 0).is_ok());
    }

    #[test]
    fn broken_triangle_is_reported() {
        let spec = ProblemSpec::builder("broken", 1, 3, TimeGrid::new(0.0, 1.0, 2).unwrap())
            .payoff(|_, _, _| 0.0)
            .switch_cost(|i, j, _, _| match (i.min(j), i.max(j)) {
                (a, b) if a == b => 0.0,
                (0, 2) => 5.0,
                _ => 1.0,
            })
            .build()
            .unwrap();
        let report = validate_costs(&spec, &[0.0]).unwrap();
        assert!(report.violations.iter().any(|v| matches!(
            v.kind,
            CostViolationKind::Triangle { i: 0, j: 1, k: 2, .. }
        )));
        assert!(validate_costs(&spec, &[]).is_err());
    }
}
