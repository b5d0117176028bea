//! CSV and JSON result files.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::experiment::ResultsBundle;

pub const ROUNDS_HEADER: [&str; 10] = [
    "method",
    "seed",
    "round",
    "accuracy",
    "loss",
    "eer",
    "far",
    "frr",
    "threshold",
    "skipped",
];
pub const SUMMARY_HEADER: [&str; 5] = ["method", "metric", "mean", "std", "n_seeds"];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {message}")]
    Encode { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn ensure_dir(dir: &Path) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), OutputError> {
    let encode = |e: csv::Error| OutputError::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(encode)?;
    w.write_record(header).map_err(encode)?;
    for row in rows {
        w.write_record(&row).map_err(encode)?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `rounds.csv` and `summary.csv` into `dir` and returns their paths.
pub fn emit_csv(bundle: &ResultsBundle, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    ensure_dir(dir)?;
    let mut rounds = Vec::new();
    let mut runs: Vec<_> = bundle.runs.iter().collect();
    runs.sort_by(|a, b| (a.method.name(), a.seed).cmp(&(b.method.name(), b.seed)));
    for run in runs {
        for r in &run.records {
            rounds.push(vec![
                run.method.name().to_string(),
                run.seed.to_string(),
                r.round.to_string(),
                fmt6(r.accuracy),
                fmt6(r.mean_loss),
                fmt6(r.eer),
                fmt6(r.far),
                fmt6(r.frr),
                fmt6(r.threshold),
                r.skipped.to_string(),
            ]);
        }
    }
    let rounds_path = dir.join("rounds.csv");
    write_rows(&rounds_path, &ROUNDS_HEADER, rounds)?;

    let summary = bundle
        .summary
        .iter()
        .map(|s| {
            vec![
                s.method.name().to_string(),
                s.metric.clone(),
                fmt6(s.mean),
                fmt6(s.std),
                s.n_seeds.to_string(),
            ]
        })
        .collect();
    let summary_path = dir.join("summary.csv");
    write_rows(&summary_path, &SUMMARY_HEADER, summary)?;
    Ok(vec![rounds_path, summary_path])
}

/// Writes the whole bundle, including the config echo, as `results.json`.
pub fn emit_json(bundle: &ResultsBundle, dir: &Path) -> Result<PathBuf, OutputError> {
    ensure_dir(dir)?;
    let path = dir.join("results.json");
    let text = serde_json::to_string_pretty(bundle).map_err(|e| OutputError::Encode {
        path: path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}
