//! Runs every configured method on every seed and collects the results.

use std::collections::BTreeMap;

use fedbio::data::{ingest_corpus, partition, split_eval, synth_generate, EvalSplit, Partition, Subject};
use fedbio::fed::{
    initial_params, run_centralized, run_federated, run_local_only, Aggregator, AttentionWeights, FedConfig,
    Federation, RunOutput,
};
use fedbio::metrics::{RocPoint, RoundRecord};
use fedbio::nn::{ParamVector, SiameseModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ExperimentConfig, Method};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Metrics summarized across seeds, in output order.
pub const SUMMARY_METRICS: [&str; 5] = ["accuracy", "loss", "eer", "far", "frr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: Method,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    /// One curve per final model; local-only has one per client.
    pub final_rocs: Vec<Vec<RocPoint>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attention: Vec<AttentionWeights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub version: String,
    pub config: ExperimentConfig,
    /// Sorted by (method name, seed).
    pub runs: Vec<MethodRun>,
    pub summary: Vec<SummaryRow>,
}

impl ResultsBundle {
    pub fn has_records(&self) -> bool {
        self.runs.iter().any(|r| !r.records.is_empty())
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("seed {seed}: {message}")]
    Setup { seed: u64, message: String },
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}

/// Rounds to the precision written to CSV, so the summary can be recomputed
/// from the per-round file.
pub fn round6(v: f64) -> f64 {
    if v.is_finite() {
        (v * 1e6).round() / 1e6
    } else {
        v
    }
}

pub fn metric_value(r: &RoundRecord, metric: &str) -> f64 {
    match metric {
        "accuracy" => r.accuracy,
        "loss" => r.mean_loss,
        "eer" => r.eer,
        "far" => r.far,
        "frr" => r.frr,
        _ => panic!("unknown metric {metric}"),
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per method and metric, statistics of the final-round values of every
/// run that produced records.
pub fn summarize(runs: &[MethodRun]) -> Vec<SummaryRow> {
    let mut finals: BTreeMap<&str, (Method, Vec<&RoundRecord>)> = BTreeMap::new();
    for run in runs {
        if let Some(last) = run.records.last() {
            finals
                .entry(run.method.name())
                .or_insert((run.method, Vec::new()))
                .1
                .push(last);
        }
    }
    let mut rows = Vec::new();
    for (method, records) in finals.values() {
        for metric in SUMMARY_METRICS {
            let values: Vec<f64> = records.iter().map(|r| round6(metric_value(r, metric))).collect();
            let (mean, std) = mean_std(&values);
            rows.push(SummaryRow {
                method: *method,
                metric: metric.to_string(),
                mean,
                std,
                n_seeds: values.len(),
            });
        }
    }
    rows
}

/// Dataset, split, partition, model and initial parameters of one seed;
/// every method of the seed reads the same instance.
pub struct SeedSetup {
    pub seed: u64,
    pub model: SiameseModel,
    pub subjects: Vec<Subject<f64>>,
    pub split: EvalSplit<f64>,
    pub partition: Partition,
    pub init: ParamVector<f64>,
}

impl SeedSetup {
    pub fn federation(&self) -> Federation<'_, f64> {
        Federation {
            model: &self.model,
            subjects: &self.subjects,
            partition: &self.partition,
            eval_pairs: &self.split.eval_pairs,
            init: &self.init,
        }
    }
}

fn load_subjects(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Subject<f64>>, String> {
    match &cfg.dataset.corpus {
        Some(dir) => {
            let corpus = ingest_corpus::<f64>(dir, cfg.dataset.image_size).map_err(|e| e.to_string())?;
            for e in &corpus.errors {
                log::warn!("skipped corpus file: {e}");
            }
            Ok(corpus.subjects)
        }
        None => synth_generate(&cfg.dataset.synth(), seed).map_err(|e| e.to_string()),
    }
}

pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedSetup, ExperimentError> {
    let fail = |message: String| ExperimentError::Setup { seed, message };
    let subjects = load_subjects(cfg, seed).map_err(fail)?;
    let split = split_eval(&subjects, cfg.dataset.holdout_fraction, seed).map_err(|e| fail(e.to_string()))?;
    let partition =
        partition(&split.train, cfg.fed.num_clients, cfg.partition, seed).map_err(|e| fail(e.to_string()))?;
    let model = cfg
        .model
        .build(cfg.dataset.image_size, subjects.len())
        .map_err(|e| fail(e.to_string()))?;
    let init = initial_params(&model, seed);
    Ok(SeedSetup {
        seed,
        model,
        subjects,
        split,
        partition,
        init,
    })
}

/// The federation settings a method runs with.
pub fn method_config(cfg: &ExperimentConfig, method: Method, seed: u64) -> FedConfig {
    let mut fed = cfg.fed.clone();
    fed.seed = seed;
    fed.dp = None;
    fed.aggregator = match method {
        Method::FedAvg => Aggregator::FedAvg,
        _ => Aggregator::Attention,
    };
    if method == Method::AttentionDp {
        fed.dp = cfg.dp;
    }
    fed
}

pub fn run_method(cfg: &ExperimentConfig, setup: &SeedSetup, method: Method) -> MethodRun {
    let fed_cfg = method_config(cfg, method, setup.seed);
    let fed = setup.federation();
    let result = match method {
        Method::Attention | Method::FedAvg | Method::AttentionDp => run_federated(&fed, &fed_cfg),
        Method::LocalOnly => run_local_only(&fed, &fed_cfg),
        Method::Centralized => run_centralized(&fed, &fed_cfg),
    };
    let (out, error) = match result {
        Ok(out) => (out, None),
        Err(e) => {
            log::error!("{method} seed {}: {e}", setup.seed);
            (RunOutput::default(), Some(e.to_string()))
        }
    };
    MethodRun {
        method,
        seed: setup.seed,
        records: out.records,
        final_rocs: out.final_rocs,
        attention: out.attention,
        error,
    }
}

/// Runs all methods for every seed. Seeds are processed one at a time
/// (each holds its own dataset); the methods of a seed run in parallel.
/// A failing method is recorded in its run and the others continue; a
/// seed whose data cannot be prepared records the failure for every method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsBundle, ExperimentError> {
    cfg.validate()?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        log::info!("seed {seed}: preparing data");
        match prepare_seed(cfg, seed) {
            Ok(setup) => {
                let done: Vec<MethodRun> = cfg.methods.par_iter().map(|&m| run_method(cfg, &setup, m)).collect();
                for r in &done {
                    if let Some(last) = r.records.last() {
                        log::info!("seed {seed}: {} final accuracy {:.4}", r.method, last.accuracy);
                    }
                }
                runs.extend(done);
            }
            Err(e) => {
                log::error!("{e}");
                runs.extend(cfg.methods.iter().map(|&method| MethodRun {
                    method,
                    seed,
                    records: Vec::new(),
                    final_rocs: Vec::new(),
                    attention: Vec::new(),
                    error: Some(e.to_string()),
                }));
            }
        }
    }
    runs.sort_by(|a, b| (a.method.name(), a.seed).cmp(&(b.method.name(), b.seed)));
    let summary = summarize(&runs);
    Ok(ResultsBundle {
        version: VERSION.to_string(),
        config: cfg.clone(),
        runs,
        summary,
    })
}
