//! Empirical tails of the truncated k-NN continuation estimate at a fixed
//! probe point, measured against a brute-force Monte Carlo oracle.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{one_step_transitions, simulate_states_at, ProblemSpec};
use crate::regress::KnnModel;
use crate::rng::{self, purpose};
use crate::solver::truncate;

/// Minimum number of transitions behind an oracle value.
pub const MIN_ORACLE_SAMPLES: usize = 100_000;
/// Minimum number of repetitions per tail configuration.
pub const MIN_REPS: usize = 200;

/// Next-step value used by lab runs: `0.5 (|x| + 1)`.
pub fn lab_value(x: &[f64]) -> f64 {
    0.5 * (x.iter().map(|v| v * v).sum::<f64>().sqrt() + 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

/// Monte Carlo estimate of `E[v(X_{n+1}) | X_n = x]` from `n_oracle`
/// independent transitions.
pub fn oracle_continuation(
    spec: &ProblemSpec,
    vhat_next: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    n: usize,
    n_oracle: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    if n_oracle < MIN_ORACLE_SAMPLES {
        return Err(Error::invalid(format!("n_oracle must be >= {MIN_ORACLE_SAMPLES}, got {n_oracle}")));
    }
    let d = spec.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    let sources: Vec<f64> = x.iter().copied().cycle().take(n_oracle * d).collect();
    let next = one_step_transitions(spec, &sources, n, 1, rng::derive_seed(seed, &[purpose::LAB, 0]))?;
    let (mut count, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
    for y in next.chunks_exact(d) {
        let v = vhat_next(y);
        count += 1;
        let delta = v - mean;
        mean += delta / count as f64;
        m2 += delta * (v - mean);
    }
    let var = if count > 1 { m2 / (count - 1) as f64 } else { 0.0 };
    Ok(OracleEstimate { mean, stderr: (var / count as f64).sqrt(), n_samples: count })
}

/// One `(k, m, m_y)` setting of the tail experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TailConfig {
    pub k: usize,
    pub m: usize,
    pub m_y: usize,
}

impl TailConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m_y == 0 {
            return Err(Error::invalid("k and m_y must be >= 1"));
        }
        if self.k >= self.m {
            return Err(Error::invalid(format!("k = {} must be < m = {}", self.k, self.m)));
        }
        Ok(())
    }
}

/// Empirical `P(|g_hat(x) - g(x)| >= delta)` on a grid of thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct TailEstimate {
    pub probe_x: Vec<f64>,
    pub k: usize,
    pub m_y: usize,
    pub m: usize,
    pub delta_grid: Vec<f64>,
    pub tail_prob: Vec<f64>,
    pub n_reps: usize,
    /// Oracle value the errors are measured against.
    pub oracle: f64,
    /// Average signed error `g_hat(x) - g(x)` over repetitions.
    pub mean_error: f64,
}

impl TailEstimate {
    /// Binomial standard error of each tail probability.
    pub fn stderr(&self) -> Vec<f64> {
        let n = self.n_reps as f64;
        self.tail_prob.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect()
    }
}

pub struct TailExperiment<'a> {
    pub spec: &'a ProblemSpec,
    pub vhat_next: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    pub probe_x: Vec<f64>,
    pub step: usize,
    pub configs: Vec<TailConfig>,
    pub delta_grid: Vec<f64>,
    pub n_reps: usize,
    pub truncation_c0: Option<f64>,
    pub n_oracle: usize,
    pub seed: u64,
}

/// Runs every configuration `n_reps` times. Repetition `r` draws its training
/// states and transitions from seeds depending only on `(seed, r)`, so
/// configurations sharing `m` see the same training data and differ only in
/// `k` or `m_y`.
pub fn tail_experiment(exp: &TailExperiment<'_>) -> Result<Vec<TailEstimate>> {
    let spec = exp.spec;
    let d = spec.dim();
    if exp.probe_x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: exp.probe_x.len() });
    }
    if exp.step >= spec.grid().n_steps() {
        return Err(Error::invalid(format!("step {} must be < N = {}", exp.step, spec.grid().n_steps())));
    }
    if exp.n_reps < MIN_REPS {
        return Err(Error::invalid(format!("n_reps must be >= {MIN_REPS}, got {}", exp.n_reps)));
    }
    if exp.configs.is_empty() {
        return Err(Error::invalid("no tail configurations"));
    }
    for c in &exp.configs {
        c.validate()?;
    }
    if exp.delta_grid.is_empty() || exp.delta_grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("delta grid must be non-empty, finite and non-negative"));
    }
    if let Some(c0) = exp.truncation_c0 {
        if !(c0 > 0.0) {
            return Err(Error::invalid("truncation C0 must be > 0"));
        }
    }
    let mut deltas = exp.delta_grid.clone();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();

    let oracle = oracle_continuation(spec, exp.vhat_next, &exp.probe_x, exp.step, exp.n_oracle, exp.seed)?;

    let mut sources: Vec<(usize, usize)> = exp.configs.iter().map(|c| (c.m, c.m_y)).collect();
    sources.sort_unstable();
    sources.dedup();

    // errors[rep][config]
    let errors: Vec<Vec<f64>> = (0..exp.n_reps)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = rng::derive_seed(exp.seed, &[purpose::LAB, 1, rep as u64]);
            let mut targets_by_source = HashMap::new();
            let mut states_by_m: HashMap<usize, Vec<f64>> = HashMap::new();
            for &(m, m_y) in &sources {
                if !states_by_m.contains_key(&m) {
                    states_by_m.insert(m, simulate_states_at(spec, m, exp.step, rng::derive_seed(rep_seed, &[0]))?);
                }
                let states = &states_by_m[&m];
                let next = one_step_transitions(spec, states, exp.step, m_y, rng::derive_seed(rep_seed, &[1]))?;
                let targets: Vec<f64> = next
                    .chunks_exact(m_y * d)
                    .map(|ys| ys.chunks_exact(d).map(exp.vhat_next).sum::<f64>() / m_y as f64)
                    .collect();
                targets_by_source.insert((m, m_y), targets);
            }
            exp.configs
                .iter()
                .map(|c| {
                    let knn = KnnModel::fit(&states_by_m[&c.m], d, &targets_by_source[&(c.m, c.m_y)], c.k)?;
                    let mut g = knn.predict(&exp.probe_x);
                    if let Some(c0) = exp.truncation_c0 {
                        g = truncate(g, c0, &exp.probe_x);
                    }
                    Ok(g - oracle.mean)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let n = exp.n_reps as f64;
    Ok(exp
        .configs
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let errs: Vec<f64> = errors.iter().map(|row| row[ci]).collect();
            let tail_prob = deltas
                .iter()
                .map(|&delta| errs.iter().filter(|e| e.abs() >= delta).count() as f64 / n)
                .collect();
            TailEstimate {
                probe_x: exp.probe_x.clone(),
                k: c.k,
                m_y: c.m_y,
                m: c.m,
                delta_grid: deltas.clone(),
                tail_prob,
                n_reps: exp.n_reps,
                oracle: oracle.mean,
                mean_error: errs.iter().sum::<f64>() / n,
            }
        })
        .collect())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &p in &idx[i..=j] {
                out[p] = avg;
            }
            i = j + 1;
        }
        out
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean) * (x - mean);
        sbb += (y - mean) * (y - mean);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("constant input has no rank correlation".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

#[derive(Debug, Serialize, Deserialize)]
struct TailRow {
    k: usize,
    m: usize,
    m_y: usize,
    delta: f64,
    tail_prob: f64,
    stderr: f64,
    n_reps: usize,
    oracle: f64,
    mean_error: f64,
    probe_x: String,
}

/// Writes one row per `(configuration, delta)`, sorted by `k` then `delta`.
/// The probe point goes in a single `;`-separated column.
pub fn export_tails(estimates: &[TailEstimate], path: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for e in estimates {
        let probe = e.probe_x.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
        for ((delta, p), se) in e.delta_grid.iter().zip(&e.tail_prob).zip(e.stderr()) {
            rows.push(TailRow {
                k: e.k,
                m: e.m,
                m_y: e.m_y,
                delta: *delta,
                tail_prob: *p,
                stderr: se,
                n_reps: e.n_reps,
                oracle: e.oracle,
                mean_error: e.mean_error,
                probe_x: probe.clone(),
            });
        }
    }
    rows.sort_by(|a, b| {
        (a.k, a.m, a.m_y).cmp(&(b.k, b.m, b.m_y)).then(a.delta.total_cmp(&b.delta))
    });
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["k", "m", "m_y", "delta", "tail_prob", "stderr", "n_reps", "oracle", "mean_error", "probe_x"])?;
    }
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a file written by [`export_tails`], one estimate per `(k, m, m_y)`.
pub fn read_tails(path: &Path) -> Result<Vec<TailEstimate>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out: Vec<TailEstimate> = Vec::new();
    for row in reader.deserialize::<TailRow>() {
        let r = row?;
        let probe_x = if r.probe_x.is_empty() {
            Vec::new()
        } else {
            r.probe_x
                .split(';')
                .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("probe_x: {e}"))))
                .collect::<Result<_>>()?
        };
        match out.last_mut() {
            Some(e) if (e.k, e.m, e.m_y) == (r.k, r.m, r.m_y) => {
                e.delta_grid.push(r.delta);
                e.tail_prob.push(r.tail_prob);
            }
            _ => out.push(TailEstimate {
                probe_x,
                k: r.k,
                m_y: r.m_y,
                m: r.m,
                delta_grid: vec![r.delta],
                tail_prob: vec![r.tail_prob],
                n_reps: r.n_reps,
                oracle: r.oracle,
                mean_error: r.mean_error,
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{make_ou_lab, TimeGrid};

    fn frozen(drift: f64) -> ProblemSpec {
        ProblemSpec::builder("frozen", 1, 1, TimeGrid::new(0.0, 1.0, 4).unwrap())
            .drift(move |_, _, out| out[0] = drift)
            .payoff(|_, _, _| 0.0)
            .switch_cost(|_, _, _, _| 0.0)
            .build()
            .unwrap()
    }

    #[test]
    fn oracle_closed_forms() {
        let ou = make_ou_lab();
        let c = oracle_continuation(&ou, &|_| 3.25, &[0.4], 2, MIN_ORACLE_SAMPLES, 1).unwrap();
        assert_eq!((c.mean, c.stderr), (3.25, 0.0));

        let still = frozen(0.0);
        let v = oracle_continuation(&still, &lab_value, &[-2.0], 1, MIN_ORACLE_SAMPLES, 1).unwrap();
        assert!((v.mean - 1.5).abs() < 1e-12);

        // dt = 0.25, so x moves from 1 to 1.5 under drift 2.
        let moving = frozen(2.0);
        let lin = |y: &[f64]| 3.0 * y[0] - 1.0;
        let v = oracle_continuation(&moving, &lin, &[1.0], 0, MIN_ORACLE_SAMPLES, 1).unwrap();
        assert!((v.mean - 3.5).abs() < 1e-12);

        assert!(oracle_continuation(&ou, &lab_value, &[0.0], 0, 10, 1).unwrap_err().is_validation());
    }

    #[test]
    fn oracle_matches_gaussian_moment() {
        // X_{n+1} ~ N(0.9, 0.1) from x = 1; E[X^2] = 0.81 + 0.1.
        let ou = make_ou_lab();
        let v = oracle_continuation(&ou, &|y| y[0] * y[0], &[1.0], 5, 200_000, 9).unwrap();
        assert!((v.mean - 0.91).abs() < 4.0 * v.stderr, "{v:?}");
    }

    fn experiment(spec: &ProblemSpec, configs: Vec<TailConfig>, c0: Option<f64>) -> TailExperiment<'_> {
        TailExperiment {
            spec,
            vhat_next: &lab_value,
            probe_x: vec![1.0],
            step: 5,
            configs,
            delta_grid: vec![0.1, 0.0, 0.05, 0.2],
            n_reps: MIN_REPS,
            truncation_c0: c0,
            n_oracle: MIN_ORACLE_SAMPLES,
            seed: 11,
        }
    }

    #[test]
    fn tails_start_at_one_and_decrease() {
        let ou = make_ou_lab();
        let cfg = vec![TailConfig { k: 5, m: 300, m_y: 1 }, TailConfig { k: 20, m: 300, m_y: 1 }];
        let est = tail_experiment(&experiment(&ou, cfg, None)).unwrap();
        for e in &est {
            assert_eq!(e.delta_grid, vec![0.0, 0.05, 0.1, 0.2]);
            assert_eq!(e.tail_prob[0], 1.0);
            assert!(e.tail_prob.windows(2).all(|w| w[1] <= w[0]));
            assert!(e.tail_prob.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn tight_truncation_biases_low() {
        let ou = make_ou_lab();
        let cfg = vec![TailConfig { k: 10, m: 300, m_y: 1 }];
        // Cap 2 * 0.2 * (1 + 1) = 0.8 sits below every target, since lab_value >= 0.5 * (|x| + 1).
        let est = tail_experiment(&experiment(&ou, cfg, Some(0.2))).unwrap();
        let e = &est[0];
        let expected = 0.8 - e.oracle;
        assert!(e.oracle > 0.8);
        assert!((e.mean_error - expected).abs() < 0.02, "{} vs {}", e.mean_error, expected);
    }

    #[test]
    fn invalid_experiments_are_rejected() {
        let ou = make_ou_lab();
        let bad_k = experiment(&ou, vec![TailConfig { k: 300, m: 300, m_y: 1 }], None);
        assert!(tail_experiment(&bad_k).unwrap_err().is_validation());
        let mut few = experiment(&ou, vec![TailConfig { k: 5, m: 300, m_y: 1 }], None);
        few.n_reps = 50;
        assert!(tail_experiment(&few).unwrap_err().is_validation());
    }

    #[test]
    fn spearman_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 5.0, 1.0, 0.0]).unwrap(), -1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 4.0, 9.0]).unwrap(), 1.0);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]).unwrap();
        assert!((r - 0.9486832980505138).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn csv_round_trip_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tails.csv");
        let mk = |k: usize, p: Vec<f64>| TailEstimate {
            probe_x: vec![1.0, -0.5],
            k,
            m_y: 1,
            m: 100,
            delta_grid: vec![0.0, 0.1],
            tail_prob: p,
            n_reps: 200,
            oracle: 0.95,
            mean_error: -0.001,
        };
        let est = vec![mk(20, vec![1.0, 0.125]), mk(5, vec![1.0, 0.5])];
        export_tails(&est, &path).unwrap();
        let back = read_tails(&path).unwrap();
        assert_eq!(back, vec![est[1].clone(), est[0].clone()]);

        export_tails(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("k,m,m_y,delta,tail_prob,stderr"));
        assert!(read_tails(&path).unwrap().is_empty());
    }
}
