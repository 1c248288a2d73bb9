//! Strategies executed on realized trajectories and the metrics comparing
//! them: decision quality `Q`, value capture `kappa` and internal consistency `C`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{simulate_paths, ProblemSpec};
use crate::rng::{self, purpose};
use crate::solver::{reconstruct_from, step_reward, ValueEnsemble};

/// Mode sequence on the `N + 1` grid points and the value it realizes.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyTrace {
    pub modes: Vec<usize>,
    pub realized_value: f64,
    /// Reward collected over each of the `N` steps.
    pub step_values: Vec<f64>,
}

fn check_path(spec: &ProblemSpec, path: &[f64], start: usize) -> Result<usize> {
    let n = spec.grid().n_steps();
    if path.len() != (n + 1) * spec.dim() {
        return Err(Error::DimensionMismatch { expected: (n + 1) * spec.dim(), got: path.len() });
    }
    if start >= spec.n_modes() {
        return Err(Error::invalid(format!("start mode {start} out of range for D = {}", spec.n_modes())));
    }
    Ok(n)
}

/// Value of following `modes` on `path` from `start`; `modes[N]` is ignored.
///
/// Accumulates backwards, `v_n = r_n + v_{n+1}`, the same order as the
/// pathwise dynamic program.
pub fn trace_value(spec: &ProblemSpec, path: &[f64], start: usize, modes: &[usize]) -> Result<(f64, Vec<f64>)> {
    let big_n = check_path(spec, path, start)?;
    if modes.len() != big_n + 1 {
        return Err(Error::DimensionMismatch { expected: big_n + 1, got: modes.len() });
    }
    let (d, dt) = (spec.dim(), spec.grid().dt());
    let step_values: Vec<f64> = (0..big_n)
        .map(|n| {
            let prev = if n == 0 { start } else { modes[n - 1] };
            step_reward(spec, dt, spec.grid().time(n), &path[n * d..(n + 1) * d], prev, modes[n])
        })
        .collect();
    let value = step_values.iter().rev().fold(0.0, |acc, r| r + acc);
    Ok((value, step_values))
}

fn finish(spec: &ProblemSpec, path: &[f64], start: usize, mut modes: Vec<usize>) -> Result<StrategyTrace> {
    let last = *modes.last().unwrap_or(&start);
    modes.push(last);
    let (realized_value, step_values) = trace_value(spec, path, start, &modes)?;
    Ok(StrategyTrace { modes, realized_value, step_values })
}

/// Decision at one grid point given the continuations `r` of every mode:
/// the mode maximizing `f_j dt - c_prev,j + R_j`, keeping `prev` on ties and
/// otherwise preferring the lowest index.
pub fn model_decision(spec: &ProblemSpec, dt: f64, t: f64, x: &[f64], prev: usize, r: &[f64]) -> usize {
    let mut best = prev;
    let mut best_value = step_reward(spec, dt, t, x, prev, prev) + r[prev];
    for (j, rj) in r.iter().enumerate() {
        if j == prev {
            continue;
        }
        let v = step_reward(spec, dt, t, x, prev, j) + rj;
        if v > best_value {
            best = j;
            best_value = v;
        }
    }
    best
}

fn model_modes(
    spec: &ProblemSpec,
    path: &[f64],
    start: usize,
    mut continuations: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<usize>> {
    let (d, dt, big_n) = (spec.dim(), spec.grid().dt(), spec.grid().n_steps());
    let mut modes = Vec::with_capacity(big_n + 1);
    let mut prev = start;
    for n in 0..big_n {
        let x = &path[n * d..(n + 1) * d];
        let r = continuations(n, x)?;
        prev = model_decision(spec, dt, spec.grid().time(n), x, prev, &r);
        modes.push(prev);
    }
    Ok(modes)
}

/// Runs the regression strategy on one `(N+1) x d` path.
pub fn run_model_policy(ens: &ValueEnsemble, spec: &ProblemSpec, path: &[f64], start: usize) -> Result<StrategyTrace> {
    check_path(spec, path, start)?;
    if ens.n_modes() != spec.n_modes() || ens.n_steps() != spec.grid().n_steps() || ens.dim() != spec.dim() {
        return Err(Error::invalid("ensemble does not match the problem"));
    }
    let modes = model_modes(spec, path, start, |n, x| ens.continuations(n, x))?;
    finish(spec, path, start, modes)
}

/// Pathwise optimal strategy computed with full knowledge of the path.
pub fn a_posteriori(spec: &ProblemSpec, path: &[f64], start: usize) -> Result<StrategyTrace> {
    let big_n = check_path(spec, path, start)?;
    let (d, dm, dt) = (spec.dim(), spec.n_modes(), spec.grid().dt());
    // value[n * dm + i]: best value from t_n on, having been in mode i before t_n.
    let mut value = vec![0.0; (big_n + 1) * dm];
    let mut choice = vec![0usize; big_n * dm];
    for n in (0..big_n).rev() {
        let x = &path[n * d..(n + 1) * d];
        let t = spec.grid().time(n);
        for i in 0..dm {
            let mut best = (0, f64::NEG_INFINITY);
            for j in 0..dm {
                let v = step_reward(spec, dt, t, x, i, j) + value[(n + 1) * dm + j];
                if v > best.1 {
                    best = (j, v);
                }
            }
            choice[n * dm + i] = best.0;
            value[n * dm + i] = best.1;
        }
    }
    let mut modes = Vec::with_capacity(big_n + 1);
    let mut prev = start;
    for n in 0..big_n {
        prev = choice[n * dm + prev];
        modes.push(prev);
    }
    let trace = finish(spec, path, start, modes)?;
    debug_assert_eq!(trace.realized_value, value[start]);
    Ok(trace)
}

/// Myopic strategy maximizing `f_j dt - c_prev,j`, lowest index on ties.
pub fn greedy(spec: &ProblemSpec, path: &[f64], start: usize) -> Result<StrategyTrace> {
    let big_n = check_path(spec, path, start)?;
    let (d, dm, dt) = (spec.dim(), spec.n_modes(), spec.grid().dt());
    let mut modes = Vec::with_capacity(big_n + 1);
    let mut prev = start;
    for n in 0..big_n {
        let x = &path[n * d..(n + 1) * d];
        let t = spec.grid().time(n);
        let mut best = (0, f64::NEG_INFINITY);
        for j in 0..dm {
            let v = step_reward(spec, dt, t, x, prev, j);
            if v > best.1 {
                best = (j, v);
            }
        }
        prev = best.0;
        modes.push(prev);
    }
    finish(spec, path, start, modes)
}

/// Share of grid points where both traces select the same mode.
pub fn decision_quality(trace: &StrategyTrace, reference: &StrategyTrace) -> Result<f64> {
    if trace.modes.len() != reference.modes.len() || trace.modes.is_empty() {
        return Err(Error::DimensionMismatch { expected: reference.modes.len(), got: trace.modes.len() });
    }
    let hits = trace.modes.iter().zip(&reference.modes).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / trace.modes.len() as f64)
}

/// `V / V_ap`; `None` when the a-posteriori value is not positive.
pub fn value_capture(trace: &StrategyTrace, ap: &StrategyTrace) -> Option<f64> {
    (ap.realized_value > 0.0).then(|| trace.realized_value / ap.realized_value)
}

/// `1 / (1 + |V - V_hat| / |V_ap|)`; `None` when the a-posteriori value is not positive.
pub fn internal_consistency(trace: &StrategyTrace, vhat: f64, ap_value: f64) -> Option<f64> {
    (ap_value > 0.0).then(|| 1.0 / (1.0 + (trace.realized_value - vhat).abs() / ap_value.abs()))
}

/// Averages of the three metrics over evaluation paths for one strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: String,
    pub start_mode: usize,
    pub n_paths: usize,
    /// Paths left out of `kappa` and `C` because their a-posteriori value is not positive.
    pub n_excluded: usize,
    pub decision_quality: f64,
    pub value_capture: f64,
    pub internal_consistency: f64,
    pub mean_value: f64,
    pub greedy_value: f64,
    pub ap_value: f64,
}

struct PathOutcome {
    ap: StrategyTrace,
    greedy: StrategyTrace,
    models: Vec<(StrategyTrace, f64)>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

fn summarize(
    strategy: &str,
    start: usize,
    outcomes: &[PathOutcome],
    pick: impl Fn(&PathOutcome) -> (&StrategyTrace, f64),
) -> Result<MetricsReport> {
    let mut q = Vec::with_capacity(outcomes.len());
    let (mut kappa, mut consistency) = (Vec::new(), Vec::new());
    for o in outcomes {
        let (trace, vhat) = pick(o);
        q.push(decision_quality(trace, &o.ap)?);
        if let (Some(k), Some(c)) =
            (value_capture(trace, &o.ap), internal_consistency(trace, vhat, o.ap.realized_value))
        {
            kappa.push(k);
            consistency.push(c);
        }
    }
    Ok(MetricsReport {
        strategy: strategy.to_string(),
        start_mode: start,
        n_paths: outcomes.len(),
        n_excluded: outcomes.len() - kappa.len(),
        decision_quality: mean(q.into_iter()),
        value_capture: mean(kappa.into_iter()),
        internal_consistency: mean(consistency.into_iter()),
        mean_value: mean(outcomes.iter().map(|o| pick(o).0.realized_value)),
        greedy_value: mean(outcomes.iter().map(|o| o.greedy.realized_value)),
        ap_value: mean(outcomes.iter().map(|o| o.ap.realized_value)),
    })
}

/// Runs every labelled ensemble plus the greedy and a-posteriori benchmarks on
/// `n_paths` fresh trajectories. Rows come out as the models in order, then
/// `greedy`, then `a_posteriori`.
pub fn evaluate_strategies(
    ensembles: &[(String, &ValueEnsemble)],
    spec: &ProblemSpec,
    n_paths: usize,
    start: usize,
    seed: u64,
) -> Result<Vec<MetricsReport>> {
    if n_paths == 0 {
        return Err(Error::invalid("n_eval_paths must be >= 1"));
    }
    if start >= spec.n_modes() {
        return Err(Error::invalid(format!("start mode {start} out of range for D = {}", spec.n_modes())));
    }
    for (label, ens) in ensembles {
        if ens.n_modes() != spec.n_modes() || ens.n_steps() != spec.grid().n_steps() || ens.dim() != spec.dim() {
            return Err(Error::invalid(format!("ensemble '{label}' does not match problem '{}'", spec.id())));
        }
    }
    let paths = simulate_paths(spec, n_paths, rng::derive_seed(seed, &[purpose::EVAL]))?;
    let big_n = spec.grid().n_steps();
    let dm = spec.n_modes();

    // Continuations per model, step and path, batched over paths.
    let tables: Vec<Vec<Vec<f64>>> = ensembles
        .iter()
        .map(|(_, ens)| (0..big_n).map(|n| ens.continuations(n, &paths.states_at(n))).collect::<Result<_>>())
        .collect::<Result<_>>()?;

    let (dt, t0) = (spec.grid().dt(), spec.grid().time(0));
    let outcomes: Vec<PathOutcome> = (0..n_paths)
        .into_par_iter()
        .map(|s| {
            let path = paths.path(s);
            let ap = a_posteriori(spec, path, start)?;
            let greedy = greedy(spec, path, start)?;
            let models = tables
                .iter()
                .map(|table| {
                    let row = |n: usize| &table[n][s * dm..(s + 1) * dm];
                    let modes = model_modes(spec, path, start, |n, _| Ok(row(n).to_vec()))?;
                    let vhat = reconstruct_from(spec, dt, t0, paths.state(s, 0), start, row(0));
                    Ok((finish(spec, path, start, modes)?, vhat))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PathOutcome { ap, greedy, models })
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(ensembles.len() + 2);
    for (m, (label, _)) in ensembles.iter().enumerate() {
        reports.push(summarize(label, start, &outcomes, |o| (&o.models[m].0, o.models[m].1))?);
    }
    reports.push(summarize("greedy", start, &outcomes, |o| (&o.greedy, o.greedy.realized_value))?);
    reports.push(summarize("a_posteriori", start, &outcomes, |o| (&o.ap, o.ap.realized_value))?);
    Ok(reports)
}

/// Metrics of a single ensemble; see [`evaluate_strategies`].
pub fn evaluate(
    ens: &ValueEnsemble,
    spec: &ProblemSpec,
    n_paths: usize,
    start: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let label = ens.config().model_spec.label();
    let mut rows = evaluate_strategies(&[(label, ens)], spec, n_paths, start, seed)?;
    Ok(rows.swap_remove(0))
}

pub const METRICS_HEADER: [&str; 10] = [
    "strategy",
    "start_mode",
    "Q",
    "kappa",
    "C",
    "n_paths",
    "n_excluded",
    "mean_value",
    "greedy_value",
    "ap_value",
];

/// CSV with columns [`METRICS_HEADER`]; start modes are 1-based.
pub fn write_metrics_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in reports {
        w.write_record([
            r.strategy.clone(),
            (r.start_mode + 1).to_string(),
            r.decision_quality.to_string(),
            r.value_capture.to_string(),
            r.internal_consistency.to_string(),
            r.n_paths.to_string(),
            r.n_excluded.to_string(),
            r.mean_value.to_string(),
            r.greedy_value.to_string(),
            r.ap_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a file written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsReport>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Format(format!("{}: unexpected columns {header:?}", path.display())));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let float = |i: usize| -> Result<f64> {
            record[i].parse().map_err(|e| Error::Format(format!("{}: {e}", METRICS_HEADER[i])))
        };
        let count = |i: usize| -> Result<usize> {
            record[i].parse().map_err(|e| Error::Format(format!("{}: {e}", METRICS_HEADER[i])))
        };
        let start = count(1)?;
        if start == 0 {
            return Err(Error::Format("start_mode is 1-based".into()));
        }
        out.push(MetricsReport {
            strategy: record[0].to_string(),
            start_mode: start - 1,
            decision_quality: float(2)?,
            value_capture: float(3)?,
            internal_consistency: float(4)?,
            n_paths: count(5)?,
            n_excluded: count(6)?,
            mean_value: float(7)?,
            greedy_value: float(8)?,
            ap_value: float(9)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{make_bsp, TimeGrid};

    /// 1-d problem on a hand-built path with payoff `f_j(x) = a_j * x + b_j`.
    fn linear(coef: Vec<(f64, f64)>, cost: f64, n_steps: usize) -> ProblemSpec {
        let dm = coef.len();
        ProblemSpec::builder("lin", 1, dm, TimeGrid::new(0.0, n_steps as f64, n_steps).unwrap())
            .payoff(move |j, _, x| coef[j].0 * x[0] + coef[j].1)
            .switch_cost(move |i, j, _, _| if i == j { 0.0 } else { cost })
            .build()
            .unwrap()
    }

    #[test]
    fn static_optimum_with_free_switching() {
        let spec = linear(vec![(0.0, 1.0), (0.0, 3.0), (0.0, 2.0)], 0.0, 4);
        let path = [0.0; 5];
        let ap = a_posteriori(&spec, &path, 0).unwrap();
        assert_eq!(ap.modes, vec![1; 5]);
        assert_eq!(ap.realized_value, 12.0);
        assert_eq!(greedy(&spec, &path, 0).unwrap().modes, ap.modes);
    }

    #[test]
    fn two_mode_enumeration() {
        // dt = 1; mode 1 pays x, mode 0 pays 0.5; switching costs 0.3.
        let spec = linear(vec![(0.0, 0.5), (1.0, 0.0)], 0.3, 2);
        for path in [[0.0, 2.0, 0.0], [1.0, 0.0, 0.0], [0.6, 0.9, 5.0], [0.2, 0.1, 0.0]] {
            for start in 0..2 {
                let ap = a_posteriori(&spec, &path, start).unwrap();
                let mut best = f64::NEG_INFINITY;
                for code in 0..8usize {
                    let modes: Vec<usize> = (0..3).map(|b| (code >> b) & 1).collect();
                    if modes[2] != modes[1] {
                        continue;
                    }
                    best = best.max(trace_value(&spec, &path, start, &modes).unwrap().0);
                }
                assert!((ap.realized_value - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn greedy_on_bsp_matches_enumeration() {
        let spec = make_bsp();
        let dt = spec.grid().dt();
        let mut path = vec![0.0; 37];
        path[0] = 0.05;
        let trace = greedy(&spec, &path, 0).unwrap();
        let expected = (0..10)
            .map(|j| (j, spec.payoff(j, 0.0, &[0.05]) * dt - spec.switch_cost(0, j, 0.0, &[0.05])))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
            .0;
        // Staying in mode 0 collects nothing; band 5 pays dt but costs 0.15.
        assert_eq!(expected, 0);
        assert_eq!(trace.modes[0], expected);
    }

    #[test]
    fn prohibitive_costs_never_switch() {
        let spec = linear(vec![(0.0, 0.0), (1.0, 0.0)], 1e6, 3);
        let path = [5.0, 5.0, 5.0, 5.0];
        assert_eq!(greedy(&spec, &path, 0).unwrap().modes, vec![0; 4]);
        assert_eq!(a_posteriori(&spec, &path, 0).unwrap().modes, vec![0; 4]);
        let r = [0.0, 10.0];
        assert_eq!(model_decision(&spec, 1.0, 0.0, &[5.0], 0, &r), 0);
    }

    #[test]
    fn metric_arithmetic() {
        let mk = |modes: Vec<usize>, v: f64| StrategyTrace { modes, realized_value: v, step_values: vec![] };
        let a = mk(vec![0; 181], 0.5);
        let mut m = vec![1; 181];
        m[..90].fill(0);
        let b = mk(m, 2.0);
        assert_eq!(decision_quality(&a, &a).unwrap(), 1.0);
        assert_eq!(decision_quality(&a, &b).unwrap(), 90.0 / 181.0);
        assert_eq!(decision_quality(&mk(vec![1; 181], 0.0), &a).unwrap(), 0.0);
        assert_eq!(value_capture(&a, &b), Some(0.25));
        assert_eq!(value_capture(&a, &mk(vec![0; 181], 0.0)), None);
        assert_eq!(internal_consistency(&a, 0.5, 2.0), Some(1.0));
        assert_eq!(internal_consistency(&a, 2.5, 2.0), Some(0.5));
        assert!(decision_quality(&a, &mk(vec![0; 3], 1.0)).is_err());
    }

    #[test]
    fn trace_values_are_self_consistent() {
        let spec = make_bsp();
        let paths = simulate_paths(&spec, 20, 3).unwrap();
        for s in 0..20 {
            let path = paths.path(s);
            let ap = a_posteriori(&spec, path, 4).unwrap();
            let gr = greedy(&spec, path, 4).unwrap();
            assert!(ap.realized_value >= gr.realized_value);
            let forward: f64 = (0..36)
                .map(|n| {
                    let prev = if n == 0 { 4 } else { gr.modes[n - 1] };
                    step_reward(&spec, spec.grid().dt(), spec.grid().time(n), paths.state(s, n), prev, gr.modes[n])
                })
                .sum();
            assert!((forward - gr.realized_value).abs() < 1e-10);
            assert_eq!(gr.modes[36], gr.modes[35]);
        }
    }

    #[test]
    fn zero_paths_is_a_validation_error() {
        let spec = make_bsp();
        let err = evaluate_strategies(&[], &spec, 0, 0, 1).unwrap_err();
        assert!(err.is_validation());
        let rows = evaluate_strategies(&[], &spec, 5, 0, 1).unwrap();
        assert_eq!(rows.iter().map(|r| r.strategy.as_str()).collect::<Vec<_>>(), vec!["greedy", "a_posteriori"]);
        assert_eq!(rows[0].internal_consistency, 1.0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&rows, &path).unwrap();
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    }
}
