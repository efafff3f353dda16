//! Experiment runner: builds the problem from a config, runs repetitions and
//! writes per-run CSV traces, a summary JSON and spectrum dumps.

mod config;

use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::ExperimentConfig;

use crate::error::{Error, Result};
use crate::gramian::GramianOperator;
use crate::linalg::{assemble_dense, LinearOperator};
use crate::model::{Mlp, MlpTopology, ParamVector};
use crate::optim::{self, RunOutput, RunRecord};
use crate::problems::{Pinn, QuadratureSet};

/// Fixed CSV column order.
pub const CSV_HEADER: [&str; 8] = ["iteration", "loss", "h1_rel_error", "mu", "ell", "pcg_iters", "matvecs", "seconds"];

/// Aggregate over the repetitions of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub problem: String,
    pub optimizer: String,
    pub median_final_error: f64,
    pub q25: f64,
    pub q75: f64,
    pub median_seconds: f64,
}

/// Files and traces produced by [`run_experiment`].
#[derive(Debug)]
pub struct ExperimentOutput {
    pub summary: Summary,
    pub runs: Vec<RunOutput>,
    pub csv_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
}

/// The discretized problem of a config, with its error-evaluation set.
pub fn build_pinn(cfg: &ExperimentConfig) -> Result<Pinn<Mlp>> {
    let topology = MlpTopology::tanh(&cfg.widths())?;
    let quad = QuadratureSet::sample(cfg.problem, cfg.n_interior, cfg.n_boundary, cfg.quadrature_seed)?;
    let eval = QuadratureSet::sample_interior(cfg.problem, cfg.n_eval, cfg.eval_seed)?;
    Pinn::new(cfg.problem, Mlp::new(topology), quad)?.with_eval(eval)
}

/// Initial parameters of the repetition with seed `seed`.
pub fn initial_theta(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<f64>> {
    Ok(ParamVector::init(&MlpTopology::tanh(&cfg.widths())?, seed).into_vec())
}

/// Runs `repetitions` runs with seeds `seed + 0..r` and writes one CSV per run
/// and `summary.json` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pinn = build_pinn(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut runs = Vec::with_capacity(cfg.repetitions);
    let mut csv_paths = Vec::with_capacity(cfg.repetitions);
    for r in 0..cfg.repetitions as u64 {
        let seed = cfg.ngd.seed + r;
        let theta0 = initial_theta(cfg, seed)?;
        let run_cfg = optim::NystromNgdConfig { seed, ..cfg.ngd.clone() };
        let out = optim::run(cfg.optimizer, &pinn, &theta0, &run_cfg)?;
        let path = cfg.out_dir.join(format!("{}_{}_seed{seed}.csv", cfg.problem.name(), cfg.optimizer.name()));
        write_csv(&path, &out.records)?;
        csv_paths.push(path);
        runs.push(out);
    }
    let errors: Vec<f64> = runs.iter().map(|r| r.last().h1_rel_error).collect();
    let seconds: Vec<f64> = runs.iter().map(|r| r.last().seconds).collect();
    let summary = Summary {
        problem: cfg.problem.name().to_string(),
        optimizer: cfg.optimizer.name().to_string(),
        median_final_error: quantile(&errors, 0.5),
        q25: quantile(&errors, 0.25),
        q75: quantile(&errors, 0.75),
        median_seconds: quantile(&seconds, 0.5),
    };
    let summary_path = cfg.out_dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    Ok(ExperimentOutput { summary, runs, csv_paths, summary_path })
}

pub fn write_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let mut rows = vec![header];
    for rec in r.records() {
        rows.push(rec.map_err(csv_error)?.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

/// Linearly interpolated sample quantile; `NaN` entries are ignored.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// The `k` largest eigenvalues of the assembled operator divided by the
/// largest, descending. Round-off negatives are clamped to zero.
pub fn normalized_spectrum<O: LinearOperator + ?Sized>(op: &O, k: usize) -> Result<Vec<f64>> {
    let g = assemble_dense(op)?;
    let g = (&g + g.transpose()) * 0.5;
    let mut eigs: Vec<f64> = g.symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| b.total_cmp(a));
    let top = eigs.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::InvalidArgument("operator has no positive eigenvalue".into()));
    }
    Ok(eigs.into_iter().take(k).map(|l| (l / top).max(0.0)).collect())
}

/// Writes the normalized spectrum of `G(θ₀)` for the config's seed to
/// `spectrum_<problem>_seed<seed>.csv` as `index,ratio` rows.
pub fn dump_spectrum(cfg: &ExperimentConfig, k: usize) -> Result<(PathBuf, Vec<f64>)> {
    let pinn = build_pinn(cfg)?;
    let theta = initial_theta(cfg, cfg.ngd.seed)?;
    let ratios = normalized_spectrum(&GramianOperator::new(&pinn, &theta)?, k)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join(format!("spectrum_{}_seed{}.csv", cfg.problem.name(), cfg.ngd.seed));
    let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
    w.write_record(["index", "ratio"]).map_err(csv_error)?;
    for (i, r) in ratios.iter().enumerate() {
        w.write_record([(i + 1).to_string(), r.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok((path, ratios))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseOperator;
    use nalgebra::DMatrix;

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0, f64::NAN];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn identity_spectrum_is_flat() {
        let op = DenseOperator::new(DMatrix::identity(6, 6)).unwrap();
        assert_eq!(normalized_spectrum(&op, 4).unwrap(), vec![1.0; 4]);
        let zero = DenseOperator::new(DMatrix::zeros(3, 3)).unwrap();
        assert!(normalized_spectrum(&zero, 2).is_err());
    }

    #[test]
    fn csv_header_matches_record_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rec = RunRecord { iteration: 0, loss: 1.5, h1_rel_error: 0.25, mu: 0.0, ell: 3, pcg_iters: 0, matvecs: 0, seconds: 0.0 };
        write_csv(&path, &[rec]).unwrap();
        let rows = read_csv(&path).unwrap();
        assert_eq!(rows[0], CSV_HEADER);
        assert_eq!(rows[1][1], "1.5");
    }
}
