use std::fmt::Write as _;
use std::path::Path;

use dplin::model::{lower_is_better, Task};
use dplin::optimizers::Algorithm;

use crate::config::{EpsilonPoint, OutputFormat};
use crate::runner::TrialResult;
use crate::Result;

pub const CSV_HEADER: [&str; 7] = ["dataset", "algorithm", "epsilon", "mean", "two_sem", "trials_ok", "trials_failed"];

/// Aggregated result for one (dataset, algorithm, ε).
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub dataset: String,
    pub algorithm: Algorithm,
    pub epsilon: EpsilonPoint,
    pub task: Task,
    /// `None` when fewer than two trials succeeded.
    pub summary: Option<(f64, f64)>,
    pub trials_ok: usize,
    pub trials_failed: usize,
}

impl Cell {
    pub fn mean(&self) -> Option<f64> {
        self.summary.map(|(m, _)| m)
    }
}

/// Mean and twice the standard error of the mean (sample standard deviation).
/// `None` for fewer than two values.
pub fn aggregate(values: &[f64]) -> Option<(f64, f64)> {
    let t = values.len();
    if t < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / t as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
    Some((mean, 2.0 * var.sqrt() / (t as f64).sqrt()))
}

/// Aggregate the trials of one cell. `trials` must share dataset, algorithm and ε.
pub fn aggregate_cell(trials: &[TrialResult], task: Task) -> Cell {
    let first = &trials[0];
    let ok: Vec<f64> = trials.iter().filter_map(|t| t.test_metric).collect();
    Cell {
        dataset: first.dataset.clone(),
        algorithm: first.algorithm,
        epsilon: first.epsilon,
        task,
        summary: aggregate(&ok),
        trials_ok: ok.len(),
        trials_failed: trials.len() - ok.len(),
    }
}

pub fn render_csv(cells: &[Cell]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for c in cells {
        let (mean, sem) = match c.summary {
            Some((m, s)) => (m.to_string(), s.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            c.dataset.clone(),
            c.algorithm.to_string(),
            c.epsilon.to_string(),
            mean,
            sem,
            c.trials_ok.to_string(),
            c.trials_failed.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Indices of the best cells among `means`: every index attaining the
/// minimum (or maximum) over available values.
pub fn best_indices(means: &[Option<f64>], lower_better: bool) -> Vec<usize> {
    let best = means.iter().flatten().copied().fold(None, |acc: Option<f64>, v| match acc {
        None => Some(v),
        Some(b) if (lower_better && v < b) || (!lower_better && v > b) => Some(v),
        keep => keep,
    });
    match best {
        None => Vec::new(),
        Some(b) => means.iter().enumerate().filter(|(_, m)| **m == Some(b)).map(|(i, _)| i).collect(),
    }
}

/// One table per dataset: rows are algorithms, columns are ε points. The best
/// cell of each column is bolded; ties bold every tied cell.
pub fn render_markdown(cells: &[Cell]) -> String {
    let mut out = String::new();
    let mut datasets: Vec<&str> = Vec::new();
    for c in cells {
        if !datasets.contains(&c.dataset.as_str()) {
            datasets.push(&c.dataset);
        }
    }
    for ds in datasets {
        let rows: Vec<&Cell> = cells.iter().filter(|c| c.dataset == ds).collect();
        let mut algos: Vec<Algorithm> = Vec::new();
        let mut eps: Vec<EpsilonPoint> = Vec::new();
        for c in &rows {
            if !algos.contains(&c.algorithm) {
                algos.push(c.algorithm);
            }
            if !eps.contains(&c.epsilon) {
                eps.push(c.epsilon);
            }
        }
        let task = rows[0].task;
        let metric = if lower_is_better(task) { "test MSE" } else { "test accuracy" };
        let _ = writeln!(out, "## {ds} ({metric})\n");
        let header: Vec<String> = eps
            .iter()
            .map(|e| match e {
                EpsilonPoint::Private(v) => format!("ε={v}"),
                EpsilonPoint::Nonprivate => "nonprivate".into(),
            })
            .collect();
        let _ = writeln!(out, "| algorithm | {} |", header.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(eps.len()));
        let lookup = |a: Algorithm, e: EpsilonPoint| rows.iter().find(|c| c.algorithm == a && c.epsilon == e).copied();
        let bold: Vec<Vec<usize>> = eps
            .iter()
            .map(|&e| {
                let means: Vec<Option<f64>> = algos.iter().map(|&a| lookup(a, e).and_then(Cell::mean)).collect();
                best_indices(&means, lower_is_better(task))
            })
            .collect();
        for (ai, &a) in algos.iter().enumerate() {
            let mut line = format!("| {a} |");
            for (ei, &e) in eps.iter().enumerate() {
                let text = match lookup(a, e) {
                    Some(Cell { summary: Some((m, s)), trials_failed, .. }) => {
                        let flag = if *trials_failed > 0 { format!(" ({trials_failed} failed)") } else { String::new() };
                        if bold[ei].contains(&ai) {
                            format!("**{m:.4} ± {s:.4}**{flag}")
                        } else {
                            format!("{m:.4} ± {s:.4}{flag}")
                        }
                    }
                    Some(_) => "n/a".into(),
                    None => String::new(),
                };
                let _ = write!(line, " {text} |");
            }
            let _ = writeln!(out, "{line}");
        }
        let _ = writeln!(out);
    }
    out.push_str("Hyperparameters were selected on the validation split without charging the privacy budget.\n");
    out
}

pub fn render(cells: &[Cell], format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => render_csv(cells),
        OutputFormat::Markdown => Ok(render_markdown(cells)),
    }
}

/// Write the report to `path`.
pub fn emit_report(cells: &[Cell], format: OutputFormat, path: &Path) -> Result<()> {
    std::fs::write(path, render(cells, format)?)?;
    Ok(())
}
