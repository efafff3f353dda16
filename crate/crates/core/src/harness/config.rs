//! Flat `key = value` experiment configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optim::{Method, MuFloor, NystromNgdConfig};
use crate::problems::Problem;

/// One experiment: a problem, a network, a quadrature and an optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: Problem,
    /// Hidden-layer widths; input and output widths follow from the problem.
    pub hidden: Vec<usize>,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub quadrature_seed: u64,
    /// Interior points of the error-evaluation set.
    pub n_eval: usize,
    pub eval_seed: u64,
    pub optimizer: Method,
    /// Optimizer settings; `ngd.seed` is the base seed of the repetitions.
    pub ngd: NystromNgdConfig,
    pub out_dir: PathBuf,
    pub repetitions: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: Problem::Poisson2d,
            hidden: vec![32, 32],
            n_interior: 400,
            n_boundary: 160,
            quadrature_seed: 0,
            n_eval: 4000,
            eval_seed: 1000,
            optimizer: Method::NystromNgd,
            ngd: NystromNgdConfig { iterations: 300, ..Default::default() },
            out_dir: PathBuf::from("results"),
            repetitions: 1,
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config { line, msg: format!("cannot parse '{value}' for '{key}'") })
}

fn parse_optional<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" || value == "none" {
        Ok(None)
    } else {
        parse(line, key, value).map(Some)
    }
}

fn parse_mu_floor(line: usize, value: &str) -> Result<MuFloor> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    let num = |s: &str| parse::<f64>(line, "mu_floor", s);
    match parts.as_slice() {
        ["none"] => Ok(MuFloor::None),
        ["constant", c] => Ok(MuFloor::Constant(num(c)?)),
        ["loss_power", c, a] => Ok(MuFloor::LossPower { c: num(c)?, alpha: num(a)? }),
        ["grad_power", c, a] => Ok(MuFloor::GradPower { c: num(c)?, alpha: num(a)? }),
        _ => Err(Error::Config { line, msg: format!("invalid mu_floor '{value}'") }),
    }
}

impl ExperimentConfig {
    /// Parses the text of a config file. Blank lines and lines starting with
    /// `#` are ignored; unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut eval_set = (false, false);
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config { line, msg: format!("expected 'key = value', got '{content}'") });
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config { line, msg: format!("duplicate key '{key}'") });
            }
            let ngd = &mut cfg.ngd;
            match key {
                "problem" => cfg.problem = Problem::by_name(value)?,
                "hidden" => {
                    cfg.hidden = value
                        .split(',')
                        .map(|w| parse(line, key, w.trim()))
                        .collect::<Result<Vec<usize>>>()?;
                }
                "n_interior" => cfg.n_interior = parse(line, key, value)?,
                "n_boundary" => cfg.n_boundary = parse(line, key, value)?,
                "quadrature_seed" => cfg.quadrature_seed = parse(line, key, value)?,
                "n_eval" => {
                    cfg.n_eval = parse(line, key, value)?;
                    eval_set.0 = true;
                }
                "eval_seed" => {
                    cfg.eval_seed = parse(line, key, value)?;
                    eval_set.1 = true;
                }
                "optimizer" => cfg.optimizer = Method::by_name(value)?,
                "seed" => ngd.seed = parse(line, key, value)?,
                "iterations" => ngd.iterations = parse(line, key, value)?,
                "max_matvecs" => ngd.max_matvecs = parse_optional(line, key, value)?,
                "ell0" => ngd.ell0 = parse(line, key, value)?,
                "ell_max" => ngd.ell_max = parse_optional(line, key, value)?,
                "gamma" => ngd.gamma = parse_optional(line, key, value)?,
                "maxit" => ngd.maxit = parse(line, key, value)?,
                "kappa" => ngd.kappa = parse(line, key, value)?,
                "mu_floor" => ngd.mu_floor = parse_mu_floor(line, value)?,
                "baseline_mu_cap" => ngd.baseline_mu_cap = parse(line, key, value)?,
                "rank_ratio" => ngd.rank_ratio = parse(line, key, value)?,
                "rank_offset" => ngd.rank_offset = parse(line, key, value)?,
                "ls_initial" => ngd.line_search.initial = parse(line, key, value)?,
                "ls_shrink" => ngd.line_search.shrink = parse(line, key, value)?,
                "ls_max_backtracks" => ngd.line_search.max_backtracks = parse(line, key, value)?,
                "ls_c1" => ngd.line_search.c1 = parse(line, key, value)?,
                "out" => cfg.out_dir = PathBuf::from(value),
                "repetitions" => cfg.repetitions = parse(line, key, value)?,
                other => return Err(Error::Config { line, msg: format!("unknown key '{other}'") }),
            }
        }
        if !eval_set.0 {
            cfg.n_eval = 10 * cfg.n_interior;
        }
        if !eval_set.1 {
            cfg.eval_seed = cfg.quadrature_seed + 1000;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config { line: 0, msg });
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths must be nonempty and positive, got {:?}", self.hidden));
        }
        if self.n_interior == 0 || self.n_boundary == 0 || self.n_eval == 0 {
            return bad("point counts must be positive".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.ngd.ell0 == 0 || self.ngd.maxit == 0 {
            return bad("ell0 and maxit must be at least 1".into());
        }
        if !(self.ngd.kappa > 0.0 && self.ngd.kappa < 1.0) {
            return bad(format!("kappa must lie in (0, 1), got {}", self.ngd.kappa));
        }
        Ok(())
    }

    /// Layer widths of the network, input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.problem.input_dim()];
        w.extend_from_slice(&self.hidden);
        w.push(1);
        w
    }
}
