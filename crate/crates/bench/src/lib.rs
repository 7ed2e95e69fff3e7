//! Benchmark harness: hyperparameter grids, seeded trials, aggregation and reports.

pub mod cli;
pub mod config;
pub mod report;
pub mod runner;

pub use config::{EpsilonPoint, ExperimentConfig, HyperGrid, OutputFormat};
pub use report::{aggregate, emit_report, render_csv, render_markdown, Cell};
pub use runner::{run_experiment, run_trial, TrialResult};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] dplin::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;
