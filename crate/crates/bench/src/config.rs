use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use dplin::optimizers::{Algorithm, OptimizerSpec};

use crate::{BenchError, Result};

/// Epsilon of the nonprivate reference run.
pub const NONPRIVATE_EPSILON: f64 = 100.0;
/// Delta of the nonprivate reference run.
pub const NONPRIVATE_DELTA: f64 = 0.999;
pub const DEFAULT_EPSILONS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];
pub const DEFAULT_TRIALS: usize = 20;
pub const DEFAULT_TIME_LIMIT_SECS: u64 = 3600;

/// One column of the results table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonPoint {
    /// Private run with δ = 1/n_train².
    Private(f64),
    Nonprivate,
}

impl EpsilonPoint {
    pub fn epsilon(self) -> f64 {
        match self {
            Self::Private(e) => e,
            Self::Nonprivate => NONPRIVATE_EPSILON,
        }
    }

    pub fn delta(self, n_train: usize) -> f64 {
        match self {
            Self::Private(_) => 1.0 / (n_train as f64 * n_train as f64),
            Self::Nonprivate => NONPRIVATE_DELTA,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("nonprivate") {
            return Ok(Self::Nonprivate);
        }
        match s.parse::<f64>() {
            Ok(e) if e.is_finite() && e > 0.0 => Ok(Self::Private(e)),
            _ => Err(BenchError::Config(format!("bad epsilon '{s}'"))),
        }
    }

    /// Default grid followed by the nonprivate proxy.
    pub fn default_grid() -> Vec<Self> {
        DEFAULT_EPSILONS.iter().map(|&e| Self::Private(e)).chain([Self::Nonprivate]).collect()
    }

    pub(crate) fn seed_key(self) -> u64 {
        match self {
            Self::Private(e) => e.to_bits(),
            Self::Nonprivate => u64::MAX,
        }
    }
}

impl fmt::Display for EpsilonPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Private(e) => write!(f, "{e}"),
            Self::Nonprivate => f.write_str("nonprivate"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutputFormat {
    #[default]
    Csv,
    Markdown,
}

/// Hyperparameter names accepted in grids.
pub const PARAMS: [&str; 12] =
    ["iter", "sparsity", "reg", "lambda", "lr", "scale", "latent", "gamma", "batch", "radius", "trunc", "clip"];

/// Set one named hyperparameter on `spec`.
pub fn apply_param(spec: &mut OptimizerSpec, name: &str, value: f64) -> Result<()> {
    let count = |v: f64| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 && v < usize::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(BenchError::Config(format!("{name} must be a positive integer, got {v}")))
        }
    };
    match name {
        "iter" => spec.iterations = count(value)?,
        "sparsity" => spec.sparsity = count(value)?,
        "latent" => spec.latent_dim = count(value)?,
        "batch" => spec.batch_size = count(value)?,
        "reg" | "lambda" => spec.reg = value,
        "lr" => spec.learning_rate = value,
        "scale" => spec.catoni_scale = value,
        "gamma" => spec.admm_penalty = value,
        "radius" => spec.l1_radius = value,
        "trunc" => spec.truncation = value,
        "clip" => spec.clip_norm = value,
        _ => return Err(BenchError::Config(format!("unknown hyperparameter '{name}'"))),
    }
    Ok(())
}

/// Per-algorithm value lists; combinations are the cartesian product in key order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HyperGrid {
    grids: BTreeMap<Algorithm, BTreeMap<String, Vec<f64>>>,
}

impl HyperGrid {
    /// The published tuning grids.
    pub fn defaults() -> Self {
        let iter = vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];
        let sparsity = vec![1.0, 2.0, 5.0, 10.0];
        let reg = vec![0.001, 0.005, 0.01, 0.05, 0.1, 0.5];
        let lr = vec![0.001, 0.01, 0.1];
        let scale = vec![1.0, 10.0, 100.0];
        let mut g = Self::default();
        g.set(Algorithm::Ts, "sparsity", sparsity.clone());
        g.set(Algorithm::Ts, "reg", reg.clone());
        for a in [Algorithm::Fw, Algorithm::HtPl] {
            g.set(a, "iter", iter.clone());
        }
        g.set(Algorithm::HtFw, "iter", iter.clone());
        g.set(Algorithm::HtFw, "scale", scale.clone());
        g.set(Algorithm::ProjErm, "latent", vec![2.0, 5.0, 10.0, 20.0]);
        for a in [Algorithm::Admm, Algorithm::AdmmHalf] {
            g.set(a, "iter", iter.clone());
            g.set(a, "gamma", vec![0.001, 0.01, 0.1, 1.0]);
            g.set(a, "reg", reg.clone());
        }
        for a in [Algorithm::DpIght, Algorithm::HtSl, Algorithm::DpSlkt, Algorithm::HtSo] {
            g.set(a, "sparsity", sparsity.clone());
            g.set(a, "lr", lr.clone());
            g.set(a, "iter", iter.clone());
        }
        g.set(Algorithm::DpSlkt, "lambda", vec![0.001, 0.01, 0.1, 1.0]);
        g.set(Algorithm::HtSo, "scale", scale);
        for a in [Algorithm::GcdGsq, Algorithm::GcdGsr, Algorithm::GcdGss] {
            g.set(a, "iter", iter.clone());
            g.set(a, "reg", reg.clone());
        }
        g.set(Algorithm::DpSgd, "batch", vec![32.0, 64.0, 128.0]);
        g.set(Algorithm::DpSgd, "lr", lr);
        g.set(Algorithm::DpSgd, "iter", iter);
        g
    }

    pub fn set(&mut self, algorithm: Algorithm, param: &str, values: Vec<f64>) {
        self.grids.entry(algorithm).or_default().insert(param.to_string(), values);
    }

    /// Apply `algo.param = v1,v2,...` lines; blank lines and `#` comments are skipped.
    pub fn apply_overrides(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| BenchError::Config(format!("grid file line {}: {m}", i + 1));
            let (key, values) = line.split_once('=').ok_or_else(|| err("expected 'algo.param = values'".into()))?;
            let (algo, param) = key.trim().split_once('.').ok_or_else(|| err(format!("bad key '{}'", key.trim())))?;
            let algo: Algorithm = algo.parse().map_err(|e: dplin::Error| err(e.to_string()))?;
            let param = param.trim();
            if !PARAMS.contains(&param) {
                return Err(err(format!("unknown hyperparameter '{param}'")));
            }
            let values = values
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| err(format!("bad value '{}'", v.trim()))))
                .collect::<Result<Vec<f64>>>()?;
            if values.is_empty() {
                return Err(err("no values".into()));
            }
            // Catch out-of-range values before any trial runs.
            let mut probe = OptimizerSpec::new(algo);
            for &v in &values {
                apply_param(&mut probe, param, v).map_err(|e| err(e.to_string()))?;
            }
            self.set(algo, param, values);
        }
        Ok(())
    }

    /// Every hyperparameter combination for `algorithm`, as (label, spec) pairs.
    /// An algorithm without a grid gets its default spec.
    pub fn combinations(&self, algorithm: Algorithm) -> Result<Vec<(String, OptimizerSpec)>> {
        let mut out = vec![(String::new(), OptimizerSpec::new(algorithm))];
        if let Some(params) = self.grids.get(&algorithm) {
            for (name, values) in params {
                let mut next = Vec::with_capacity(out.len() * values.len());
                for (label, spec) in &out {
                    for &v in values {
                        let mut s = spec.clone();
                        apply_param(&mut s, name, v)?;
                        let sep = if label.is_empty() { "" } else { ";" };
                        next.push((format!("{label}{sep}{name}={v}"), s));
                    }
                }
                out = next;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Named dataset or `synthetic:` pseudo-path.
    pub dataset: String,
    pub data_dir: PathBuf,
    pub algorithms: Vec<Algorithm>,
    pub epsilons: Vec<EpsilonPoint>,
    pub trials: usize,
    pub master_seed: u64,
    pub grid: HyperGrid,
    /// Wall-clock limit per trial, in seconds.
    pub time_limit_secs: u64,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<String>, algorithms: Vec<Algorithm>) -> Self {
        Self {
            dataset: dataset.into(),
            data_dir: default_data_dir(),
            algorithms,
            epsilons: EpsilonPoint::default_grid(),
            trials: DEFAULT_TRIALS,
            master_seed: 0,
            grid: HyperGrid::defaults(),
            time_limit_secs: DEFAULT_TIME_LIMIT_SECS,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(BenchError::Config("no algorithms selected".into()));
        }
        if self.epsilons.is_empty() {
            return Err(BenchError::Config("empty epsilon grid".into()));
        }
        if self.trials == 0 {
            return Err(BenchError::Config("trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// `DPLIN_DATA_DIR` if set, otherwise `./data`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os("DPLIN_DATA_DIR").map(PathBuf::from).unwrap_or_else(|| Path::new("data").to_path_buf())
}

/// Parse a comma list of algorithm ids, or `all`.
pub fn parse_algorithms(list: &str) -> Result<Vec<Algorithm>> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(Algorithm::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let a: Algorithm = part.parse().map_err(|e: dplin::Error| BenchError::Config(e.to_string()))?;
        if !out.contains(&a) {
            out.push(a);
        }
    }
    Ok(out)
}

pub fn parse_epsilons(list: &str) -> Result<Vec<EpsilonPoint>> {
    list.split(',').filter(|p| !p.trim().is_empty()).map(EpsilonPoint::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_sizes() {
        let g = HyperGrid::defaults();
        let size = |a| g.combinations(a).unwrap().len();
        assert_eq!(size(Algorithm::Ts), 24);
        assert_eq!(size(Algorithm::Fw), 7);
        assert_eq!(size(Algorithm::HtFw), 21);
        assert_eq!(size(Algorithm::ProjErm), 4);
        assert_eq!(size(Algorithm::Admm), 168);
        assert_eq!(size(Algorithm::DpIght), 84);
        assert_eq!(size(Algorithm::DpSlkt), 336);
        assert_eq!(size(Algorithm::HtSo), 252);
        assert_eq!(size(Algorithm::GcdGsr), 42);
        assert_eq!(size(Algorithm::DpSgd), 63);
        assert_eq!(size(Algorithm::PolyFw), 1);
    }

    #[test]
    fn combinations_apply_values() {
        let mut g = HyperGrid::default();
        g.set(Algorithm::HtSo, "iter", vec![3.0, 4.0]);
        g.set(Algorithm::HtSo, "lr", vec![0.5]);
        let c = g.combinations(Algorithm::HtSo).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].0, "iter=3;lr=0.5");
        assert_eq!(c[1].1.iterations, 4);
        assert_eq!(c[1].1.learning_rate, 0.5);
    }

    #[test]
    fn grid_file_overrides() {
        let mut g = HyperGrid::defaults();
        g.apply_overrides("# tuning\nfw.iter = 3, 4\n\ndpight.lr=0.2 # faster\n").unwrap();
        assert_eq!(g.combinations(Algorithm::Fw).unwrap().len(), 2);
        assert_eq!(g.combinations(Algorithm::DpIght).unwrap().len(), 4 * 7);
        for bad in ["fw.iter", "nope.iter = 1", "fw.bogus = 1", "fw.iter = x", "fw.iter = 0.5", "fwiter = 1"] {
            assert!(HyperGrid::defaults().apply_overrides(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn epsilon_parsing() {
        assert_eq!(parse_epsilons("0.1, nonprivate").unwrap(), vec![EpsilonPoint::Private(0.1), EpsilonPoint::Nonprivate]);
        assert!(parse_epsilons("0").is_err());
        assert!(parse_epsilons("abc").is_err());
        assert_eq!(EpsilonPoint::default_grid().len(), 6);
        assert_eq!(EpsilonPoint::Nonprivate.to_string(), "nonprivate");
        assert_eq!(EpsilonPoint::Private(0.5).to_string(), "0.5");
    }

    #[test]
    fn private_delta_from_train_size() {
        let d = EpsilonPoint::Private(1.0).delta(151);
        assert!((d - 4.3858e-5).abs() < 1e-9);
        assert_eq!(EpsilonPoint::Nonprivate.delta(151), 0.999);
    }

    #[test]
    fn algorithm_lists() {
        assert_eq!(parse_algorithms("all").unwrap().len(), Algorithm::ALL.len());
        assert_eq!(parse_algorithms("fw,dpight,fw").unwrap(), vec![Algorithm::Fw, Algorithm::DpIght]);
        assert!(parse_algorithms("fw,xyz").is_err());
    }
}
