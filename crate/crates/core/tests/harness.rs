use std::process::Command;

use nystrom_ngd::autodiff::Jet;
use nystrom_ngd::gramian::GramianOperator;
use nystrom_ngd::harness::{normalized_spectrum, read_csv, run_experiment, ExperimentConfig, CSV_HEADER};
use nystrom_ngd::linalg::DenseOperator;
use nystrom_ngd::model::LinearModel;
use nystrom_ngd::optim::Method;
use nystrom_ngd::problems::{Pinn, PointSet, Problem, QuadratureSet, Role};

fn small_config(dir: &std::path::Path, iterations: usize, extra: &str) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    let text = format!(
        "# test experiment\nproblem = poisson1d\nhidden = 6\nn_interior = 30\nn_boundary = 2\n\
         iterations = {iterations}\nout = {}\n{extra}",
        dir.join("out").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nystrom-ngd"))
}

#[test]
fn zero_budget_writes_header_and_initial_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_path(small_config(dir.path(), 0, "")).unwrap();
    let out = run_experiment(&cfg).unwrap();
    let rows = read_csv(&out.csv_paths[0]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], CSV_HEADER);
    assert_eq!(rows[1][0], "0");
    assert_eq!(rows[1][6], "0");
}

#[test]
fn repetitions_use_consecutive_seeds_and_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_path(small_config(dir.path(), 8, "repetitions = 3\nseed = 5\n")).unwrap();
    let out = run_experiment(&cfg).unwrap();
    let names: Vec<String> =
        out.csv_paths.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(
        names,
        ["poisson1d_nystrom_ngd_seed5.csv", "poisson1d_nystrom_ngd_seed6.csv", "poisson1d_nystrom_ngd_seed7.csv"]
    );
    for run in &out.runs {
        assert_eq!(run.records.len(), 9);
        assert!(run.records.windows(2).all(|w| w[1].iteration == w[0].iteration + 1));
        assert!(run.records.windows(2).all(|w| w[1].matvecs >= w[0].matvecs));
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out.summary_path).unwrap()).unwrap();
    for key in ["problem", "optimizer", "median_final_error", "q25", "q75", "median_seconds"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let s = &out.summary;
    assert!(s.q25 <= s.median_final_error && s.median_final_error <= s.q75);
    assert_eq!(json["optimizer"], "nystrom_ngd");
}

#[test]
fn every_optimizer_runs_from_config() {
    for method in Method::ALL {
        let dir = tempfile::tempdir().unwrap();
        let extra = format!("optimizer = {}\n", method.name());
        let cfg = ExperimentConfig::from_path(small_config(dir.path(), 8, &extra)).unwrap();
        let out = run_experiment(&cfg).unwrap();
        let run = &out.runs[0];
        assert!(run.last().loss < run.records[0].loss, "{} did not decrease the loss", method.name());
    }
}

#[test]
fn spectrum_of_orthogonal_linear_features() {
    // Features supported on disjoint points with weights 1 and 1/4: G = diag(1, 1/4).
    let model = LinearModel::new(
        1,
        vec![
            Box::new(|x: &[f64]| Jet::constant(1, if x[0] < 0.5 { 1.0 } else { 0.0 })),
            Box::new(|x: &[f64]| Jet::constant(1, if x[0] >= 0.5 { 1.0 } else { 0.0 })),
        ],
    );
    let set = PointSet::new(Role::Interior, 1, vec![0.25, 0.75], vec![1.0, 0.25]).unwrap();
    let pinn = Pinn::new(Problem::L2Fit1d, model, QuadratureSet::new(vec![set]).unwrap()).unwrap();
    let op = GramianOperator::new(&pinn, &[0.3, -0.2]).unwrap();
    let ratios = normalized_spectrum(&op, 2).unwrap();
    assert!((ratios[0] - 1.0).abs() <= 1e-14 && (ratios[1] - 0.25).abs() <= 1e-14, "{ratios:?}");

    let flat = DenseOperator::new(nalgebra::DMatrix::identity(4, 4)).unwrap();
    assert_eq!(normalized_spectrum(&flat, 4).unwrap(), vec![1.0; 4]);
}

#[test]
fn cli_run_and_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 8, "");
    let alt = dir.path().join("alt");
    let out = bin().args(["run", cfg.to_str().unwrap(), "--out", alt.to_str().unwrap(), "--seed", "3"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["problem"], "poisson1d");
    assert!(alt.join("poisson1d_nystrom_ngd_seed3.csv").exists());
    assert!(alt.join("summary.json").exists());

    let out = bin().args(["spectrum", cfg.to_str().unwrap(), "--top", "6"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let values: Vec<f64> = String::from_utf8(out.stdout).unwrap().lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(values.len(), 6);
    assert_eq!(values[0], 1.0);
    assert!(values.windows(2).all(|w| w[1] <= w[0]));
    assert!(values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(dir.path().join("out").join("spectrum_poisson1d_seed0.csv").exists());
}

#[test]
fn cli_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "problem = wave\n").unwrap();
    let out = bin().args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown problem 'wave'"));

    let out = bin().args(["run", dir.path().join("missing.cfg").to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
}
