//! C interface to `optswitch`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! constructor such as `os_config_load`, `os_problem_named`, `os_simulate` or
//! `os_solve`, and released with the matching `os_*_free`. Functions return an [`OsStatus`]; on failure the
//! message is kept per thread and can be read with [`os_last_error_message`].
//! Modes are 0-based. Panics never unwind into C; they surface as
//! [`OsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use optswitch::config::ExperimentConfig;
use optswitch::policy::{evaluate_strategies, MetricsReport};
use optswitch::process::{simulate_paths, ProblemSpec, TrajectorySet};
use optswitch::regress::ModelSpec;
use optswitch::solver::{backward_solve, load_ensemble, save_ensemble, SolverConfig, ValueEnsemble};
use optswitch::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    MissingModel = 5,
    Format = 6,
    Io = 7,
    Panic = 8,
}

/// Experiment configuration (a preset or a TOML file).
pub struct OsConfig(ExperimentConfig);

/// A built switching problem.
pub struct OsProblem(ProblemSpec);

/// Simulated trajectories.
pub struct OsPaths(TrajectorySet);

/// Fitted continuation models for every step and mode.
pub struct OsEnsemble(ValueEnsemble);

/// Scores of one strategy, averaged over evaluation paths.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OsMetrics {
    pub decision_quality: f64,
    pub value_capture: f64,
    pub internal_consistency: f64,
    pub n_paths: usize,
    pub n_excluded: usize,
    pub mean_value: f64,
    pub greedy_value: f64,
    pub ap_value: f64,
}

impl From<&MetricsReport> for OsMetrics {
    fn from(r: &MetricsReport) -> Self {
        Self {
            decision_quality: r.decision_quality,
            value_capture: r.value_capture,
            internal_consistency: r.internal_consistency,
            n_paths: r.n_paths,
            n_excluded: r.n_excluded,
            mean_value: r.mean_value,
            greedy_value: r.greedy_value,
            ap_value: r.ap_value,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> OsStatus {
    match err {
        Error::Invalid(_) => OsStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => OsStatus::DimensionMismatch,
        Error::NonFiniteState { .. }
        | Error::Singular { .. }
        | Error::NoConvergence { .. }
        | Error::Degenerate(_) => OsStatus::Numerical,
        Error::MissingModel { .. } => OsStatus::MissingModel,
        Error::Fit { source, .. } | Error::Model { source, .. } => status_of(source),
        Error::Format(_) => OsStatus::Format,
        Error::Io(_) => OsStatus::Io,
    }
}

struct Failure(OsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(OsStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> OsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            OsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            OsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(OsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length excluding the NUL.
/// Passing a null `buf` only queries the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn os_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn os_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a preset (`cl`, `aclp`, `bsp`, `hcl10`, `hcl50`, `concentration`) or a TOML file.
///
/// # Safety
/// `name_or_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_config_load(name_or_path: *const c_char, out: *mut *mut OsConfig) -> OsStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(str_arg(name_or_path, "name_or_path")?)?;
        cfg.validate()?;
        put(out, OsConfig(cfg))
    })
}

/// # Safety
/// `cfg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn os_config_set_seed(cfg: *mut OsConfig, seed: u64) -> OsStatus {
    guard(|| {
        cfg.as_mut().ok_or_else(|| null("cfg"))?.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn os_config_free(cfg: *mut OsConfig) {
    free(cfg)
}

/// Builds the problem described by `cfg`.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_problem_from_config(cfg: *const OsConfig, out: *mut *mut OsProblem) -> OsStatus {
    guard(|| put(out, OsProblem(obj(cfg, "cfg")?.0.validate()?)))
}

/// Builds a named problem (`cl`, `aclp`, `bsp`, `hcl`, `ou_lab`, `jump_lab`)
/// with its default parameters; `dim` is only read by `hcl`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_problem_named(name: *const c_char, dim: usize, out: *mut *mut OsProblem) -> OsStatus {
    guard(|| {
        let mut pc = optswitch::config::ProblemConfig::named(str_arg(name, "name")?);
        if pc.name == "hcl" {
            pc.dim = Some(dim);
        }
        put(out, OsProblem(pc.build()?))
    })
}

/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn os_problem_dim(p: *const OsProblem) -> usize {
    p.as_ref().map_or(0, |p| p.0.dim())
}

/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn os_problem_n_modes(p: *const OsProblem) -> usize {
    p.as_ref().map_or(0, |p| p.0.n_modes())
}

/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn os_problem_n_steps(p: *const OsProblem) -> usize {
    p.as_ref().map_or(0, |p| p.0.grid().n_steps())
}

/// # Safety
/// `p` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn os_problem_free(p: *mut OsProblem) {
    free(p)
}

/// Simulates `m` trajectories.
///
/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_simulate(
    problem: *const OsProblem,
    m: usize,
    seed: u64,
    out: *mut *mut OsPaths,
) -> OsStatus {
    guard(|| put(out, OsPaths(simulate_paths(&obj(problem, "problem")?.0, m, seed)?)))
}

/// # Safety
/// `paths` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn os_paths_count(paths: *const OsPaths) -> usize {
    paths.as_ref().map_or(0, |p| p.0.n_paths())
}

/// Copies the state of path `s` at step `n` into `out[0..dim]`.
///
/// # Safety
/// `paths` must be a live handle; `out` must point to `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn os_paths_state(paths: *const OsPaths, s: usize, n: usize, out: *mut f64, dim: usize) -> OsStatus {
    guard(|| {
        let p = &obj(paths, "paths")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        if dim != p.dim() {
            return Err(Error::DimensionMismatch { expected: p.dim(), got: dim }.into());
        }
        if s >= p.n_paths() || n > p.n_steps() {
            return Err(Failure(OsStatus::InvalidArgument, format!("no state for path {s}, step {n}")));
        }
        ptr::copy_nonoverlapping(p.state(s, n).as_ptr(), out, dim);
        Ok(())
    })
}

/// # Safety
/// `paths` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn os_paths_free(paths: *mut OsPaths) {
    free(paths)
}

/// Runs the backward induction with the named model at its default
/// hyperparameters and the default solver settings.
///
/// # Safety
/// Handles must be live, `model` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn os_solve(
    problem: *const OsProblem,
    paths: *const OsPaths,
    model: *const c_char,
    seed: u64,
    out: *mut *mut OsEnsemble,
) -> OsStatus {
    guard(|| {
        let spec = &obj(problem, "problem")?.0;
        let paths = &obj(paths, "paths")?.0;
        let model = ModelSpec::default_for(str_arg(model, "model")?, spec.dim())?;
        let (ens, _) = backward_solve(spec, paths, &SolverConfig::new(model, seed))?;
        put(out, OsEnsemble(ens))
    })
}

/// Trains the model labelled `label` in `cfg` on trajectories simulated with
/// the configuration's seed and solver settings, as the CLI does.
///
/// # Safety
/// Handles must be live, `label` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn os_solve_config(
    cfg: *const OsConfig,
    label: *const c_char,
    out: *mut *mut OsEnsemble,
) -> OsStatus {
    guard(|| {
        let cfg = &obj(cfg, "cfg")?.0;
        let label = str_arg(label, "label")?;
        let spec = cfg.validate()?;
        let (_, model) = cfg
            .model_specs(spec.dim())?
            .into_iter()
            .find(|(l, _)| l == label)
            .ok_or_else(|| Failure(OsStatus::InvalidArgument, format!("no model labelled '{label}'")))?;
        let paths = simulate_paths(&spec, cfg.simulation.n_paths, cfg.simulate_seed())?;
        let (ens, _) = backward_solve(&spec, &paths, &cfg.solver_config(model))?;
        put(out, OsEnsemble(ens))
    })
}

/// # Safety
/// `ens` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn os_ensemble_save(ens: *const OsEnsemble, path: *const c_char) -> OsStatus {
    guard(|| Ok(save_ensemble(&obj(ens, "ens")?.0, Path::new(str_arg(path, "path")?))?))
}

/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn os_ensemble_load(path: *const c_char, out: *mut *mut OsEnsemble) -> OsStatus {
    guard(|| put(out, OsEnsemble(load_ensemble(Path::new(str_arg(path, "path")?))?)))
}

/// Continuation estimates of every mode at step `n` and state `x[0..dim]`,
/// written to `out[0..n_modes]`.
///
/// # Safety
/// `ens` must be a live handle; `x` must hold `dim` and `out` `n_modes` doubles.
#[no_mangle]
pub unsafe extern "C" fn os_ensemble_continuations(
    ens: *const OsEnsemble,
    n: usize,
    x: *const f64,
    dim: usize,
    out: *mut f64,
    n_modes: usize,
) -> OsStatus {
    guard(|| {
        let ens = &obj(ens, "ens")?.0;
        if x.is_null() || out.is_null() {
            return Err(null("x or out"));
        }
        if n_modes != ens.n_modes() {
            return Err(Error::DimensionMismatch { expected: ens.n_modes(), got: n_modes }.into());
        }
        let r = ens.continuations(n, std::slice::from_raw_parts(x, dim))?;
        ptr::copy_nonoverlapping(r.as_ptr(), out, n_modes);
        Ok(())
    })
}

/// # Safety
/// `ens` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn os_ensemble_free(ens: *mut OsEnsemble) {
    free(ens)
}

/// Scores `ens` and the greedy and a-posteriori benchmarks on `n_paths` fresh
/// trajectories starting in mode `start`. Any of the three outputs may be null.
///
/// # Safety
/// Handles must be live; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn os_evaluate(
    ens: *const OsEnsemble,
    problem: *const OsProblem,
    n_paths: usize,
    start: usize,
    seed: u64,
    model_out: *mut OsMetrics,
    greedy_out: *mut OsMetrics,
    ap_out: *mut OsMetrics,
) -> OsStatus {
    guard(|| {
        let ens = &obj(ens, "ens")?.0;
        let spec = &obj(problem, "problem")?.0;
        let rows = evaluate_strategies(&[("model".into(), ens)], spec, n_paths, start, seed)?;
        for (dst, row) in [model_out, greedy_out, ap_out].into_iter().zip(&rows) {
            if let Some(d) = dst.as_mut() {
                *d = OsMetrics::from(row);
            }
        }
        Ok(())
    })
}
