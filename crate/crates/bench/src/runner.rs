use std::time::{Duration, Instant};

use rayon::prelude::*;

use dplin::data::{load_dataset, split};
use dplin::model::{evaluate, lower_is_better, Dataset, Task};
use dplin::optimizers::{fit, Algorithm};
use dplin::privacy::{derive_seed, NoiseSource, PrivacyBudget};

use crate::config::{EpsilonPoint, ExperimentConfig};
use crate::report::{aggregate_cell, Cell};
use crate::{BenchError, Result};

/// Domain separator for split seeds.
const SPLIT_KEY: u64 = 0x0053_504c_4954;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub dataset: String,
    pub algorithm: Algorithm,
    pub epsilon: EpsilonPoint,
    pub trial: usize,
    /// Chosen hyperparameters, `name=value` joined by `;`.
    pub params: String,
    /// `None` when the trial failed.
    pub test_metric: Option<f64>,
    pub validation_metric: Option<f64>,
    pub failure: Option<String>,
    pub wall_time: f64,
}

impl TrialResult {
    pub fn is_ok(&self) -> bool {
        self.test_metric.is_some()
    }
}

fn worst(task: Task) -> f64 {
    if lower_is_better(task) {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    }
}

fn better(task: Task, a: f64, b: f64) -> bool {
    if lower_is_better(task) {
        a < b
    } else {
        a > b
    }
}

/// Split seed for a trial; depends only on the master seed and trial index.
pub fn split_seed(master: u64, trial: usize) -> u64 {
    derive_seed(&[master, SPLIT_KEY, trial as u64])
}

/// One trial of one cell: split, tune on validation, score the winner on test.
///
/// A fit that errors or yields a non-finite metric scores the worst possible
/// validation value. The trial fails when no combination produced a finite
/// validation metric or the time limit passes before the grid is done.
pub fn run_trial(
    config: &ExperimentConfig,
    data: &Dataset,
    algorithm: Algorithm,
    epsilon: EpsilonPoint,
    trial: usize,
) -> Result<TrialResult> {
    let start = Instant::now();
    let limit = Duration::from_secs(config.time_limit_secs);
    let task = data.task();
    let parts = split(data.n(), split_seed(config.master_seed, trial))?;
    let train = data.select_rows(&parts.train);
    let val = data.select_rows(&parts.val);
    let test = data.select_rows(&parts.test);
    let budget = PrivacyBudget::new(epsilon.epsilon(), epsilon.delta(train.n()))?;
    let combos = config.grid.combinations(algorithm)?;

    let mut result = TrialResult {
        dataset: config.dataset.clone(),
        algorithm,
        epsilon,
        trial,
        params: String::new(),
        test_metric: None,
        validation_metric: None,
        failure: None,
        wall_time: 0.0,
    };
    let mut best: Option<(f64, usize, dplin::model::WeightVector)> = None;
    let mut first_error = None;
    for (index, (_, spec)) in combos.iter().enumerate() {
        if start.elapsed() > limit {
            result.failure = Some("timeout".into());
            result.wall_time = start.elapsed().as_secs_f64();
            return Ok(result);
        }
        let seed = derive_seed(&[config.master_seed, trial as u64, algorithm as u64, epsilon.seed_key(), index as u64]);
        let score = match fit(&train, &budget, spec, &mut NoiseSource::new(seed)) {
            Ok(report) => {
                let v = evaluate(&report.weights, &val).ok().filter(|v| v.is_finite()).unwrap_or(worst(task));
                Some((v, report.weights))
            }
            Err(e) => {
                first_error.get_or_insert_with(|| e.to_string());
                None
            }
        };
        if let Some((v, w)) = score {
            if v.is_finite() && best.as_ref().is_none_or(|(b, _, _)| better(task, v, *b)) {
                best = Some((v, index, w));
            }
        }
    }
    if start.elapsed() > limit {
        result.failure = Some("timeout".into());
    } else {
        match best {
            Some((v, index, w)) => {
                result.params = combos[index].0.clone();
                result.validation_metric = Some(v);
                match evaluate(&w, &test) {
                    Ok(t) if t.is_finite() => result.test_metric = Some(t),
                    _ => result.failure = Some("non-finite test metric".into()),
                }
            }
            None => {
                result.failure = Some(first_error.unwrap_or_else(|| "no finite validation metric".into()));
            }
        }
    }
    result.wall_time = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Algorithms that can run on `task`. Explicit requests for an unsupported
/// pairing are config errors.
pub fn usable_algorithms(requested: &[Algorithm], task: Task, explicit: bool) -> Result<Vec<Algorithm>> {
    if explicit {
        if let Some(a) = requested.iter().find(|a| !a.supports(task)) {
            return Err(BenchError::Config(format!("{a} does not support the {task} task")));
        }
    }
    Ok(requested.iter().copied().filter(|a| a.supports(task)).collect())
}

/// Run every (algorithm, ε, trial) and aggregate into cells, in algorithm then ε order.
pub fn run_experiment(config: &ExperimentConfig, data: &Dataset) -> Result<(Vec<Cell>, Vec<TrialResult>)> {
    config.validate()?;
    let mut jobs = Vec::new();
    for &a in &config.algorithms {
        for &e in &config.epsilons {
            for t in 0..config.trials {
                jobs.push((a, e, t));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
    let results: Vec<TrialResult> =
        pool.install(|| jobs.par_iter().map(|&(a, e, t)| run_trial(config, data, a, e, t)).collect::<Result<_>>())?;
    let cells = results.chunks(config.trials).map(|chunk| aggregate_cell(chunk, data.task())).collect();
    Ok((cells, results))
}

/// Load the configured dataset.
pub fn load(config: &ExperimentConfig) -> Result<Dataset> {
    Ok(load_dataset(&config.dataset, &config.data_dir)?)
}
