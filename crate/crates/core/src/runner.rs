//! The command-line experiments as library calls: simulate, train, evaluate,
//! concentration and report. Every command reads an [`ExperimentConfig`] and
//! communicates with the others only through files in the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::concentration::{export_tails, lab_value, tail_experiment, TailEstimate, TailExperiment};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::policy::{evaluate_strategies, model_decision, read_metrics_csv, write_metrics_csv, MetricsReport};
use crate::process::{read_trajectories, simulate_paths, write_trajectories, ProblemSpec};
use crate::regress::ModelSpec;
use crate::solver::{backward_solve, load_ensemble, save_ensemble, ValueEnsemble};

pub const TRAJECTORY_FILE: &str = "trajectories.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TAILS_FILE: &str = "tails.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

pub fn ensemble_file(dir: &Path, label: &str) -> PathBuf {
    dir.join(format!("ensemble_{label}.bin"))
}

pub fn loss_file(dir: &Path, label: &str) -> PathBuf {
    dir.join(format!("loss_{label}.csv"))
}

pub fn boundary_file(dir: &Path, label: &str, step: usize) -> PathBuf {
    dir.join(format!("boundary_{label}_n{step}.csv"))
}

fn output_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg.output_dir.clone())
}

/// Simulates `simulation.n_paths` trajectories and writes them to `out`
/// (default `<output_dir>/trajectories.bin`) plus a metadata sidecar.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf> {
    let spec = cfg.validate()?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => output_dir(cfg)?.join(TRAJECTORY_FILE),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let started = Instant::now();
    let set = simulate_paths(&spec, cfg.simulation.n_paths, cfg.simulate_seed())?;
    log::info!("simulated {} paths in {:.2}s", set.n_paths(), started.elapsed().as_secs_f64());
    write_trajectories(&set, &path)?;
    Ok(path)
}

/// Models to train or evaluate. A name matching a configured label takes that
/// entry; any other known model name uses its defaults.
pub fn select_models(cfg: &ExperimentConfig, dim: usize, names: Option<&[String]>) -> Result<Vec<(String, ModelSpec)>> {
    let configured = cfg.model_specs(dim)?;
    let Some(names) = names else {
        return Ok(configured);
    };
    names
        .iter()
        .map(|name| match configured.iter().find(|(l, _)| l == name) {
            Some(found) => Ok(found.clone()),
            None => Ok((name.clone(), ModelSpec::default_for(name, dim)?)),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub label: String,
    pub ensemble: PathBuf,
    pub losses: PathBuf,
}

/// Runs the backward induction once per model on the trajectories in `paths_file`.
pub fn cmd_train(cfg: &ExperimentConfig, paths_file: &Path, models: Option<&[String]>) -> Result<Vec<TrainedModel>> {
    let spec = cfg.validate()?;
    let selected = select_models(cfg, spec.dim(), models)?;
    let paths = read_trajectories(paths_file)?;
    if !paths.spec_id().is_empty() && paths.spec_id() != spec.id() {
        return Err(Error::invalid(format!(
            "trajectories were simulated for '{}' but the problem is '{}'",
            paths.spec_id(),
            spec.id()
        )));
    }
    let dir = output_dir(cfg)?;
    let mut out = Vec::with_capacity(selected.len());
    for (label, model_spec) in selected {
        let started = Instant::now();
        let solver = cfg.solver_config(model_spec);
        let (ens, losses) = backward_solve(&spec, &paths, &solver)
            .map_err(|e| Error::Model { label: label.clone(), source: Box::new(e) })?;
        log::info!("trained '{label}' in {:.2}s", started.elapsed().as_secs_f64());
        let trained =
            TrainedModel { label: label.clone(), ensemble: ensemble_file(&dir, &label), losses: loss_file(&dir, &label) };
        save_ensemble(&ens, &trained.ensemble)?;
        losses.write_csv(&trained.losses)?;
        out.push(trained);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub reports: Vec<MetricsReport>,
    pub metrics: PathBuf,
    pub lattices: Vec<PathBuf>,
}

/// Resolves `--models` entries for evaluation: existing files are used as
/// given, anything else names `<output_dir>/ensemble_<name>.bin`.
pub fn ensemble_sources(cfg: &ExperimentConfig, names: Option<&[String]>) -> Result<Vec<(String, PathBuf)>> {
    let labels: Vec<String> = match names {
        Some(n) => n.to_vec(),
        None => cfg.model_specs(cfg.problem.build()?.dim())?.into_iter().map(|(l, _)| l).collect(),
    };
    Ok(labels
        .into_iter()
        .map(|name| {
            let as_path = PathBuf::from(&name);
            if as_path.is_file() {
                let label = as_path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .map(|s| s.strip_prefix("ensemble_").unwrap_or(s).to_string())
                    .unwrap_or(name);
                (label, as_path)
            } else {
                (name.clone(), ensemble_file(&cfg.output_dir, &name))
            }
        })
        .collect())
}

/// Decisions of `ens` on a `resolution x resolution` lattice at step `n`,
/// rows ordered by `x1` then `x0`; returns `(x0, x1, mode)` with 0-based modes.
pub fn boundary_lattice(
    ens: &ValueEnsemble,
    spec: &ProblemSpec,
    n: usize,
    from_mode: usize,
    x_range: [f64; 2],
    y_range: [f64; 2],
    resolution: usize,
) -> Result<Vec<(f64, f64, usize)>> {
    if spec.dim() != 2 {
        return Err(Error::invalid("boundary lattices need a 2-dimensional problem"));
    }
    let axis = |r: [f64; 2], i: usize| r[0] + (r[1] - r[0]) * i as f64 / (resolution - 1) as f64;
    let mut xs = Vec::with_capacity(resolution * resolution * 2);
    for iy in 0..resolution {
        for ix in 0..resolution {
            xs.push(axis(x_range, ix));
            xs.push(axis(y_range, iy));
        }
    }
    let r = ens.continuations(n, &xs)?;
    let (dt, t) = (spec.grid().dt(), spec.grid().time(n));
    let dm = spec.n_modes();
    Ok(xs
        .chunks_exact(2)
        .zip(r.chunks_exact(dm))
        .map(|(x, rk)| (x[0], x[1], model_decision(spec, dt, t, x, from_mode, rk)))
        .collect())
}

fn write_lattice(rows: &[(f64, f64, usize)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x0", "x1", "mode"])?;
    for (a, b, m) in rows {
        w.write_record([a.to_string(), b.to_string(), (m + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluates the given ensembles plus the greedy and a-posteriori benchmarks,
/// writes `metrics.csv` and, when configured, boundary lattices.
pub fn cmd_evaluate(cfg: &ExperimentConfig, ensembles: &[(String, PathBuf)]) -> Result<Evaluation> {
    let spec = cfg.validate()?;
    let mut loaded = Vec::with_capacity(ensembles.len());
    for (label, path) in ensembles {
        if !path.is_file() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("ensemble for '{label}' not found at {}", path.display()),
            )));
        }
        let ens = load_ensemble(path)?;
        if ens.spec_id() != spec.id() {
            return Err(Error::invalid(format!(
                "ensemble '{label}' was trained on '{}' but the problem is '{}'",
                ens.spec_id(),
                spec.id()
            )));
        }
        loaded.push((label.clone(), ens));
    }
    let refs: Vec<(String, &ValueEnsemble)> = loaded.iter().map(|(l, e)| (l.clone(), e)).collect();
    let start = cfg.eval.start_mode - 1;
    let started = Instant::now();
    let reports = evaluate_strategies(&refs, &spec, cfg.eval.n_eval_paths, start, cfg.eval_seed())?;
    log::info!("evaluated {} strategies in {:.2}s", reports.len(), started.elapsed().as_secs_f64());

    let dir = output_dir(cfg)?;
    let metrics = dir.join(METRICS_FILE);
    write_metrics_csv(&reports, &metrics)?;

    let mut lattices = Vec::new();
    if let Some(b) = &cfg.eval.boundary {
        let from = b.from_mode.map(|m| m - 1).unwrap_or(start);
        for (label, ens) in &loaded {
            for &n in &b.steps {
                let rows = boundary_lattice(ens, &spec, n, from, b.x_range, b.y_range, b.resolution)?;
                let path = boundary_file(&dir, label, n);
                write_lattice(&rows, &path)?;
                lattices.push(path);
            }
        }
    }
    Ok(Evaluation { reports, metrics, lattices })
}

/// Runs the configured tail experiment and writes `tails.csv`.
pub fn cmd_concentration(cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<TailEstimate>)> {
    let spec = cfg.validate()?;
    let c = cfg
        .concentration
        .as_ref()
        .ok_or_else(|| Error::invalid("config has no [concentration] section"))?;
    let exp = TailExperiment {
        spec: &spec,
        vhat_next: &lab_value,
        probe_x: c.probe_x.clone(),
        step: c.step,
        configs: c.configs(),
        delta_grid: c.delta.clone(),
        n_reps: c.n_reps,
        truncation_c0: c.truncation_c0,
        n_oracle: c.n_oracle,
        seed: cfg.lab_seed(),
    };
    let started = Instant::now();
    let estimates = tail_experiment(&exp)?;
    log::info!("tail experiment finished in {:.2}s", started.elapsed().as_secs_f64());
    let path = output_dir(cfg)?.join(TAILS_FILE);
    export_tails(&estimates, &path)?;
    Ok((path, estimates))
}

/// One line of the merged report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub source: String,
    pub metrics: MetricsReport,
    pub best_q: bool,
    pub best_kappa: bool,
    pub best_c: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub text: String,
}

fn is_benchmark(strategy: &str) -> bool {
    strategy == "greedy" || strategy == "a_posteriori"
}

/// Merges metrics files and marks the best model per column. The greedy and
/// a-posteriori benchmarks are listed but never marked; equal values share
/// the mark. Benchmark rows repeated verbatim across inputs are kept once.
pub fn build_report(inputs: &[PathBuf]) -> Result<Report> {
    if inputs.is_empty() {
        return Err(Error::invalid("report needs at least one metrics file"));
    }
    let mut rows: Vec<ReportRow> = Vec::new();
    for path in inputs {
        let source = path.display().to_string();
        for m in read_metrics_csv(path)? {
            if is_benchmark(&m.strategy) && rows.iter().any(|r| r.metrics == m) {
                continue;
            }
            rows.push(ReportRow { source: source.clone(), metrics: m, best_q: false, best_kappa: false, best_c: false });
        }
    }
    let best = |f: fn(&MetricsReport) -> f64| {
        rows.iter()
            .filter(|r| !is_benchmark(&r.metrics.strategy))
            .map(|r| f(&r.metrics))
            .filter(|v| !v.is_nan())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let (bq, bk, bc) =
        (best(|m| m.decision_quality), best(|m| m.value_capture), best(|m| m.internal_consistency));
    for r in rows.iter_mut().filter(|r| !is_benchmark(&r.metrics.strategy)) {
        r.best_q = r.metrics.decision_quality == bq;
        r.best_kappa = r.metrics.value_capture == bk;
        r.best_c = r.metrics.internal_consistency == bc;
    }

    let width = rows.iter().map(|r| r.metrics.strategy.len()).max().unwrap_or(8).max(8);
    let mut text = String::new();
    let _ = writeln!(text, "{:<width$}  {:>10}  {:>10}  {:>10}  {:>7}", "strategy", "kappa", "Q", "C", "paths");
    for r in &rows {
        let cell = |v: f64, b: bool| format!("{v:.4}{}", if b { "*" } else { " " });
        let _ = writeln!(
            text,
            "{:<width$}  {:>10}  {:>10}  {:>10}  {:>7}",
            r.metrics.strategy,
            cell(r.metrics.value_capture, r.best_kappa),
            cell(r.metrics.decision_quality, r.best_q),
            cell(r.metrics.internal_consistency, r.best_c),
            r.metrics.n_paths
        );
    }
    let _ = writeln!(text, "* best among regression strategies");
    Ok(Report { rows, text })
}

pub fn write_report_csv(report: &Report, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["source", "strategy", "start_mode", "Q", "kappa", "C", "n_paths", "n_excluded", "best"])?;
    for r in &report.rows {
        let marks: Vec<&str> = [(r.best_q, "Q"), (r.best_kappa, "kappa"), (r.best_c, "C")]
            .into_iter()
            .filter_map(|(b, n)| b.then_some(n))
            .collect();
        let m = &r.metrics;
        w.write_record([
            r.source.clone(),
            m.strategy.clone(),
            (m.start_mode + 1).to_string(),
            m.decision_quality.to_string(),
            m.value_capture.to_string(),
            m.internal_consistency.to_string(),
            m.n_paths.to_string(),
            m.n_excluded.to_string(),
            marks.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Builds the merged report, writes `summary.csv` into `out_dir` and returns it.
pub fn cmd_report(inputs: &[PathBuf], out_dir: &Path) -> Result<Report> {
    let report = build_report(inputs)?;
    fs::create_dir_all(out_dir)?;
    write_report_csv(&report, &out_dir.join(SUMMARY_FILE))?;
    Ok(report)
}
