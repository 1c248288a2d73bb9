//! TOML experiment configuration and the built-in presets.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::concentration::TailConfig;
use crate::error::{Error, Result};
use crate::process::{make_aclp, make_bsp, make_cl, make_hcl, make_jump_lab, make_ou_lab, AclpParams, ProblemSpec, TimeGrid};
use crate::regress::{Hyperparams, ModelSpec};
use crate::rng::{self, purpose};
use crate::solver::SolverConfig;

pub const PRESETS: &[(&str, &str)] = &[
    ("cl", include_str!("../presets/cl.toml")),
    ("aclp", include_str!("../presets/aclp.toml")),
    ("bsp", include_str!("../presets/bsp.toml")),
    ("hcl10", include_str!("../presets/hcl10.toml")),
    ("hcl50", include_str!("../presets/hcl50.toml")),
    ("concentration", include_str!("../presets/concentration.toml")),
];

pub const PROBLEM_NAMES: &[&str] = &["cl", "aclp", "bsp", "hcl", "ou_lab", "jump_lab"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// One of [`PROBLEM_NAMES`].
    pub name: String,
    /// State dimension; only read by `hcl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Drop the jump component of the dynamics.
    #[serde(default, skip_serializing_if = "is_false")]
    pub no_jumps: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aclp: Option<AclpParams>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl ProblemConfig {
    pub fn named(name: &str) -> Self {
        Self { name: name.into(), dim: None, n_steps: None, t_end: None, no_jumps: false, aclp: None }
    }

    pub fn build(&self) -> Result<ProblemSpec> {
        let base = match self.name.as_str() {
            "cl" => make_cl(),
            "aclp" => make_aclp(self.aclp.clone().unwrap_or_default())?,
            "bsp" => make_bsp(),
            "hcl" => make_hcl(self.dim.unwrap_or(10))?,
            "ou_lab" => make_ou_lab(),
            "jump_lab" => make_jump_lab(),
            other => {
                return Err(Error::invalid(format!(
                    "unknown problem '{other}', expected one of {}",
                    PROBLEM_NAMES.join(", ")
                )))
            }
        };
        if self.dim.is_some_and(|d| d != base.dim()) {
            return Err(Error::invalid(format!("problem '{}' has fixed dimension {}", self.name, base.dim())));
        }
        let mut spec = base;
        if self.n_steps.is_some() || self.t_end.is_some() {
            let g = spec.grid();
            let grid = TimeGrid::new(g.t_start(), self.t_end.unwrap_or(g.t_end()), self.n_steps.unwrap_or(g.n_steps()))?;
            spec = spec.with_grid(grid);
        }
        if self.no_jumps {
            spec = spec.without_jumps();
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n_paths: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { n_paths: 10_000 }
    }
}

/// Solver settings shared by every model of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub m_y: usize,
    pub train_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_c0: Option<f64>,
    pub warm_start_mlp: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { m_y: 1, train_fraction: 0.9, truncation_c0: None, warm_start_mlp: true }
    }
}

/// A model given by name with default hyperparameters, or spelled out in full.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelEntry {
    Named(String),
    Custom {
        label: String,
        hyper: Hyperparams,
        #[serde(default = "yes")]
        standardize: bool,
    },
}

fn yes() -> bool {
    true
}

impl ModelEntry {
    /// `(label, spec)` for a problem of dimension `dim`.
    pub fn resolve(&self, dim: usize) -> Result<(String, ModelSpec)> {
        match self {
            ModelEntry::Named(name) => Ok((name.clone(), ModelSpec::default_for(name, dim)?)),
            ModelEntry::Custom { label, hyper, standardize } => {
                let spec = ModelSpec { hyper: hyper.clone(), standardize: *standardize };
                spec.validate()?;
                Ok((label.clone(), spec))
            }
        }
    }
}

/// Rectangle of states for switching-boundary lattices of 2-d problems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub steps: Vec<usize>,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// 1-based mode occupied before the decision; defaults to the evaluation start mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_mode: Option<usize>,
}

fn default_resolution() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_eval_paths: usize,
    /// 1-based.
    pub start_mode: usize,
    /// Defaults to a value derived from the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_eval_paths: 1000, start_mode: 1, seed: None, boundary: None }
    }
}

/// Tail experiment grid: every `k` is combined with every `m_y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    pub step: usize,
    pub probe_x: Vec<f64>,
    pub k: Vec<usize>,
    pub m: usize,
    #[serde(default = "one")]
    pub m_y: Vec<usize>,
    pub delta: Vec<f64>,
    pub n_reps: usize,
    #[serde(default = "default_oracle")]
    pub n_oracle: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_c0: Option<f64>,
}

fn one() -> Vec<usize> {
    vec![1]
}

fn default_oracle() -> usize {
    crate::concentration::MIN_ORACLE_SAMPLES
}

impl ConcentrationConfig {
    pub fn configs(&self) -> Vec<TailConfig> {
        self.k
            .iter()
            .flat_map(|&k| self.m_y.iter().map(move |&m_y| TailConfig { k, m: self.m, m_y }))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream of the experiment is derived from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<ConcentrationConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    /// Embedded preset by name.
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::invalid(format!("unknown preset '{name}'")))?;
        Self::from_toml(text)
    }

    /// A preset name, or else a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if PRESETS.iter().any(|(n, _)| *n == name_or_path) {
            return Self::preset(name_or_path);
        }
        let path = Path::new(name_or_path);
        if !path.is_file() {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            return Err(Error::invalid(format!(
                "'{name_or_path}' is neither a preset ({}) nor a config file",
                names.join(", ")
            )));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Models as `(label, spec)` in configuration order.
    pub fn model_specs(&self, dim: usize) -> Result<Vec<(String, ModelSpec)>> {
        let mut seen = HashSet::new();
        self.models
            .iter()
            .map(|m| {
                let (label, spec) = m.resolve(dim)?;
                if label.is_empty() || label.contains(['/', '\\']) {
                    return Err(Error::invalid(format!("invalid model label '{label}'")));
                }
                if !seen.insert(label.clone()) {
                    return Err(Error::invalid(format!("duplicate model label '{label}'")));
                }
                Ok((label, spec))
            })
            .collect()
    }

    pub fn solver_config(&self, model_spec: ModelSpec) -> SolverConfig {
        SolverConfig {
            m_y: self.solver.m_y,
            model_spec,
            train_fraction: self.solver.train_fraction,
            truncation_c0: self.solver.truncation_c0,
            warm_start_mlp: self.solver.warm_start_mlp,
            seed: self.solve_seed(),
        }
    }

    pub fn simulate_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[purpose::SIMULATE])
    }

    pub fn solve_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[purpose::SOLVE])
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval.seed.unwrap_or_else(|| rng::derive_seed(self.seed, &[purpose::EVAL]))
    }

    pub fn lab_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[purpose::LAB])
    }

    /// Checks everything that can be checked without touching the file system.
    pub fn validate(&self) -> Result<ProblemSpec> {
        let spec = self.problem.build()?;
        if self.simulation.n_paths == 0 {
            return Err(Error::invalid("simulation.n_paths must be >= 1"));
        }
        let specs = self.model_specs(spec.dim())?;
        for (_, m) in &specs {
            self.solver_config(m.clone()).validate()?;
        }
        if self.eval.n_eval_paths == 0 {
            return Err(Error::invalid("eval.n_eval_paths must be >= 1"));
        }
        if self.eval.start_mode == 0 || self.eval.start_mode > spec.n_modes() {
            return Err(Error::invalid(format!(
                "eval.start_mode must be in 1..={}, got {}",
                spec.n_modes(),
                self.eval.start_mode
            )));
        }
        if let Some(b) = &self.eval.boundary {
            if spec.dim() != 2 {
                return Err(Error::invalid("boundary lattices need a 2-dimensional problem"));
            }
            if b.resolution < 2 {
                return Err(Error::invalid("boundary resolution must be >= 2"));
            }
            if b.steps.iter().any(|&n| n >= spec.grid().n_steps()) {
                return Err(Error::invalid(format!("boundary steps must be < N = {}", spec.grid().n_steps())));
            }
            let ok = |r: &[f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] < r[1];
            if !ok(&b.x_range) || !ok(&b.y_range) {
                return Err(Error::invalid("boundary ranges must be finite and increasing"));
            }
            if b.from_mode.is_some_and(|m| m == 0 || m > spec.n_modes()) {
                return Err(Error::invalid("boundary.from_mode out of range"));
            }
        }
        if let Some(c) = &self.concentration {
            if c.k.is_empty() || c.m_y.is_empty() {
                return Err(Error::invalid("concentration grid is empty"));
            }
            for t in c.configs() {
                t.validate()?;
            }
            if c.probe_x.len() != spec.dim() {
                return Err(Error::DimensionMismatch { expected: spec.dim(), got: c.probe_x.len() });
            }
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for (name, _) in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        let cl = ExperimentConfig::preset("cl").unwrap();
        let spec = cl.validate().unwrap();
        assert_eq!((cl.simulation.n_paths, spec.grid().n_steps(), spec.dim()), (50_000, 180, 2));
        let hcl = ExperimentConfig::preset("hcl50").unwrap().validate().unwrap();
        assert_eq!(hcl.dim(), 50);
    }

    #[test]
    fn toml_round_trip() {
        for (name, _) in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn custom_models_and_errors() {
        let text = r#"
            seed = 3
            output_dir = "out"
            models = ["knn", { label = "knn3", hyper = { knn = { k = 3 } } }]
            [problem]
            name = "bsp"
            n_steps = 6
            [simulation]
            n_paths = 0
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let specs = cfg.model_specs(1).unwrap();
        assert_eq!(specs[1].1.hyper, Hyperparams::Knn { k: 3 });
        assert!(specs[1].1.standardize);
        assert!(cfg.validate().unwrap_err().is_validation());

        let mut ok = cfg.clone();
        ok.simulation.n_paths = 10;
        assert_eq!(ok.validate().unwrap().grid().n_steps(), 6);
        ok.models.push(ModelEntry::Named("knn".into()));
        assert!(ok.validate().unwrap_err().is_validation());

        let mut bad_problem = ok.clone();
        bad_problem.problem = ProblemConfig::named("nope");
        assert!(bad_problem.validate().unwrap_err().is_validation());
        assert!(ExperimentConfig::from_toml("seed = 1\nbogus = 2").unwrap_err().is_validation());
    }

    #[test]
    fn seeds_are_distinct_per_purpose() {
        let cfg = ExperimentConfig::preset("bsp").unwrap();
        let seeds = [cfg.simulate_seed(), cfg.solve_seed(), cfg.eval_seed(), cfg.lab_seed()];
        let unique: HashSet<_> = seeds.iter().collect();
        assert_eq!(unique.len(), 4);
    }
}
