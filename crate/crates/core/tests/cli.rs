use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use optswitch::policy::{read_metrics_csv, write_metrics_csv, MetricsReport};

const SMALL_BSP: &str = r#"
seed = 7
output_dir = "unused"
models = ["knn", "ols_poly"]

[problem]
name = "bsp"

[simulation]
n_paths = 300

[eval]
n_eval_paths = 100
"#;

fn optswitch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optswitch")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn pipeline(cfg: &str, out: &Path) {
    let out = out.to_str().unwrap();
    for cmd in ["simulate", "train", "evaluate"] {
        let res = optswitch(&[cmd, "--config", cfg, "--out", out]);
        assert_eq!(code(&res), 0, "{cmd}: {}", String::from_utf8_lossy(&res.stderr));
    }
}

#[test]
fn pipeline_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bsp.toml", SMALL_BSP);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&cfg, &a);
    pipeline(&cfg, &b);
    for file in ["trajectories.bin", "ensemble_knn.bin", "loss_knn.csv", "ensemble_ols_poly.bin", "metrics.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let rows = read_metrics_csv(&a.join("metrics.csv")).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.strategy.as_str()).collect();
    assert_eq!(names, ["knn", "ols_poly", "greedy", "a_posteriori"]);
    assert!(rows.iter().all(|r| r.start_mode == 0 && r.n_paths == 100));
}

#[test]
fn seed_flag_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bsp.toml", SMALL_BSP);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        let res = optswitch(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert_eq!(code(&res), 0);
    }
    assert_ne!(fs::read(a.join("trajectories.bin")).unwrap(), fs::read(b.join("trajectories.bin")).unwrap());
}

#[test]
fn evaluation_without_models_reports_benchmarks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bsp.toml", &SMALL_BSP.replace(r#"["knn", "ols_poly"]"#, "[]"));
    let out = dir.path().join("o");
    let res = optswitch(&["evaluate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let rows = read_metrics_csv(&out.join("metrics.csv")).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.strategy.as_str()).collect();
    assert_eq!(names, ["greedy", "a_posteriori"]);
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_config(dir.path(), "empty.toml", &SMALL_BSP.replace("n_paths = 300", "n_paths = 0"));
    let res = optswitch(&["simulate", "--config", &empty, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&res), 2);

    let lab = r#"
seed = 1
output_dir = "unused"
models = []

[problem]
name = "ou_lab"

[concentration]
step = 5
probe_x = [1.0]
k = [5, 300]
m = 300
delta = [0.05]
n_reps = 200
n_oracle = 100000
"#;
    let lab = write_config(dir.path(), "lab.toml", lab);
    let res = optswitch(&["concentration", "--config", &lab, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&res), 2, "{}", String::from_utf8_lossy(&res.stderr));

    let typo = write_config(dir.path(), "typo.toml", &format!("{SMALL_BSP}\nbogus = 1\n"));
    assert_eq!(code(&optswitch(&["simulate", "--config", &typo])), 2);
    assert_eq!(code(&optswitch(&["simulate", "--config", "no_such_preset"])), 2);
    assert_eq!(code(&optswitch(&["train", "--config", "bsp", "--models", "no_such_model"])), 2);
    assert_eq!(code(&optswitch(&["simulate"])), 2);
}

#[test]
fn missing_inputs_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bsp.toml", SMALL_BSP);
    let out = dir.path().to_str().unwrap();
    let res = optswitch(&["evaluate", "--config", &cfg, "--out", out, "--models", "knn"]);
    assert_eq!(code(&res), 3);
    let res = optswitch(&["train", "--config", &cfg, "--out", out]);
    assert_eq!(code(&res), 3);
}

#[test]
fn concentration_writes_tails() {
    let dir = tempfile::tempdir().unwrap();
    let lab = r#"
seed = 1
output_dir = "unused"
models = []

[problem]
name = "ou_lab"

[concentration]
step = 5
probe_x = [1.0]
k = [5, 20]
m = 400
delta = [0.1, 0.0]
n_reps = 200
n_oracle = 100000
"#;
    let lab = write_config(dir.path(), "lab.toml", lab);
    let out = dir.path().join("o");
    let res = optswitch(&["concentration", "--config", &lab, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let tails = optswitch::concentration::read_tails(&out.join("tails.csv")).unwrap();
    assert_eq!(tails.len(), 2);
    assert!(tails.iter().all(|t| t.delta_grid == [0.0, 0.1] && t.n_reps == 200));
}

fn metrics(strategy: &str, q: f64, kappa: f64, c: f64) -> MetricsReport {
    MetricsReport {
        strategy: strategy.into(),
        start_mode: 0,
        n_paths: 10,
        n_excluded: 0,
        decision_quality: q,
        value_capture: kappa,
        internal_consistency: c,
        mean_value: 1.0,
        greedy_value: 0.5,
        ap_value: 2.0,
    }
}

#[test]
fn report_marks_ties_and_skips_benchmarks() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let bench = [metrics("greedy", 0.1, 0.2, 1.0), metrics("a_posteriori", 1.0, 1.0, 1.0)];
    let mut first = vec![metrics("knn", 0.9, 0.95, 0.7)];
    first.extend(bench.iter().cloned());
    let mut second = vec![metrics("mlp", 0.8, 0.95, 0.9)];
    second.extend(bench.iter().cloned());
    write_metrics_csv(&first, &a).unwrap();
    write_metrics_csv(&second, &b).unwrap();

    let out = dir.path().join("summary");
    let res = optswitch(&["report", a.to_str().unwrap(), b.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let mut reader = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let rows: Vec<(String, String)> =
        reader.records().map(|r| r.unwrap()).map(|r| (r[1].to_string(), r[8].to_string())).collect();
    let want = [("knn", "Q;kappa"), ("greedy", ""), ("a_posteriori", ""), ("mlp", "kappa;C")];
    assert_eq!(rows.len(), want.len());
    for ((s, m), (ws, wm)) in rows.iter().zip(want) {
        assert_eq!((s.as_str(), m.as_str()), (ws, wm));
    }
    assert_eq!(code(&optswitch(&["report", dir.path().join("none.csv").to_str().unwrap()])), 3);
}
