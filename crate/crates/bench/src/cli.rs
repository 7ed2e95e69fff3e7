use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::Parser;

use dplin::optimizers::Algorithm;

use crate::config::{default_data_dir, parse_algorithms, parse_epsilons, ExperimentConfig, HyperGrid, OutputFormat};
use crate::report::render;
use crate::runner::{load, run_experiment, usable_algorithms};
use crate::{BenchError, Result};

/// Private sparse linear model benchmark.
#[derive(Debug, Parser)]
#[command(name = "dplin", version)]
pub struct Args {
    /// Dataset name (bodyfat, pah, e2006, heart, dbworld, rcv1) or
    /// `synthetic:n=..,d=..,s=..,sd=..,task=linear|logistic[,seed=..]`.
    #[arg(long, required_unless_present = "list_algos")]
    pub dataset: Option<String>,
    /// Comma-separated algorithm ids, or `all`.
    #[arg(long, default_value = "all")]
    pub algo: String,
    /// Comma-separated epsilons; `nonprivate` adds the reference run.
    /// Defaults to 0.1,0.5,1,2,5,nonprivate.
    #[arg(long)]
    pub epsilons: Option<String>,
    #[arg(long, default_value_t = crate::config::DEFAULT_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// File of `algo.param = v1,v2,...` lines overriding the default grids.
    #[arg(long)]
    pub grid_file: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Wall-clock limit per trial.
    #[arg(long, default_value_t = crate::config::DEFAULT_TIME_LIMIT_SECS)]
    pub time_limit_secs: u64,
    /// Exit with status 2 if any trial failed.
    #[arg(long)]
    pub strict: bool,
    /// Print algorithm ids and exit.
    #[arg(long)]
    pub list_algos: bool,
    /// Directory holding dataset files. Falls back to $DPLIN_DATA_DIR, then ./data.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

impl Args {
    pub fn to_config(&self) -> Result<ExperimentConfig> {
        let dataset = self.dataset.clone().ok_or_else(|| BenchError::Config("--dataset is required".into()))?;
        let mut config = ExperimentConfig::new(dataset, parse_algorithms(&self.algo)?);
        if let Some(e) = &self.epsilons {
            config.epsilons = parse_epsilons(e)?;
        }
        config.trials = self.trials;
        config.master_seed = self.seed;
        if let Some(path) = &self.grid_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| BenchError::Config(format!("cannot read grid file {}: {e}", path.display())))?;
            let mut grid = HyperGrid::defaults();
            grid.apply_overrides(&text)?;
            config.grid = grid;
        }
        config.time_limit_secs = self.time_limit_secs;
        config.workers = self.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if config.workers == 0 {
            return Err(BenchError::Config("--workers must be at least 1".into()));
        }
        config.data_dir = self.data_dir.clone().unwrap_or_else(default_data_dir);
        config.validate()?;
        Ok(config)
    }
}

/// Run the CLI and return the process exit code: 0 on success, 1 on a
/// configuration or runtime error, 2 under `--strict` when a trial failed.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    if args.list_algos {
        for a in Algorithm::ALL {
            let _ = writeln!(stdout, "{a}");
        }
        return 0;
    }
    match execute(&args, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

fn execute(args: &Args, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let mut config = args.to_config()?;
    let data = load(&config)?;
    let explicit = !args.algo.trim().eq_ignore_ascii_case("all");
    config.algorithms = usable_algorithms(&config.algorithms, data.task(), explicit)?;
    let (cells, trials) = run_experiment(&config, &data)?;
    for t in trials.iter().filter(|t| !t.is_ok()) {
        let _ = writeln!(
            stderr,
            "trial failed: {} {} eps={} trial={}: {}",
            t.dataset,
            t.algorithm,
            t.epsilon,
            t.trial,
            t.failure.as_deref().unwrap_or("unknown")
        );
    }
    let text = render(&cells, args.format)?;
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    let failed = cells.iter().any(|c| c.trials_failed > 0);
    Ok(if args.strict && failed { 2 } else { 0 })
}
