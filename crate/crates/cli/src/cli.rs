use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use fedbio::data::{synth_generate, write_corpus, SynthConfig};

use crate::config::parse_config;
use crate::experiment::run_experiment;
use crate::output::{emit_csv, emit_json};
use crate::plots::emit_plots;
use crate::selftest::{gradcheck_suite, metrics_oracle_suite, worst_per_block};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fedbio", version, about = "Federated biometric verification experiments")]
struct Cli {
    /// Base seed; for `run` it replaces the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for `run`, overriding `output_dir`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment config and write CSV, JSON and SVG results.
    Run { config: PathBuf },
    /// Check the reference model's gradients against finite differences.
    Gradcheck {
        /// Number of seeds, starting at --seed (default 0).
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Input side length.
        #[arg(long, default_value_t = 12)]
        size: usize,
    },
    /// Write a synthetic corpus as `<subject>_<impression>.pgm` files.
    Synth {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        subjects: usize,
        #[arg(long, default_value_t = 8)]
        impressions: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
    /// Compare the metric sweep against brute force on random scored sets.
    MetricsOracle {
        #[arg(long, default_value_t = 100)]
        sets: usize,
        #[arg(long, default_value_t = 200)]
        max_pairs: usize,
    },
}

fn init_logging(quiet: bool) {
    let level = if quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
    log::set_max_level(level);
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 on a runtime failure, 2 on bad usage.
pub fn cli_entry<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.quiet);
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config, cli.seed, cli.output.as_deref()),
        Command::Gradcheck { seeds, size } => cmd_gradcheck(cli.seed.unwrap_or(0), *seeds, *size),
        Command::Synth {
            out_dir,
            subjects,
            impressions,
            size,
        } => {
            let cfg = SynthConfig {
                num_subjects: *subjects,
                impressions_per_subject: *impressions,
                image_size: *size,
                ..SynthConfig::default()
            };
            cmd_synth(&cfg, cli.seed.unwrap_or(0), out_dir)
        }
        Command::MetricsOracle { sets, max_pairs } => cmd_metrics_oracle(*sets, *max_pairs, cli.seed.unwrap_or(0)),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_FAILURE
        }
    }
}

fn cmd_run(config: &Path, seed: Option<u64>, output: Option<&Path>) -> Result<(), String> {
    let mut cfg = parse_config(config).map_err(|e| e.to_string())?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(dir) = output {
        cfg.output_dir = dir.to_path_buf();
    }
    let start = Instant::now();
    let bundle = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let dir = &cfg.output_dir;
    let mut written = emit_csv(&bundle, dir).map_err(|e| e.to_string())?;
    written.push(emit_json(&bundle, dir).map_err(|e| e.to_string())?);
    written.extend(emit_plots(&bundle, dir).map_err(|e| e.to_string())?);
    for row in bundle.summary.iter().filter(|r| r.metric == "accuracy") {
        println!(
            "{:<13} accuracy {:.4} ± {:.4} over {} seed(s)",
            row.method.name(),
            row.mean,
            row.std,
            row.n_seeds
        );
    }
    for p in &written {
        log::info!("wrote {}", p.display());
    }
    log::info!("finished in {:.1} s", start.elapsed().as_secs_f64());
    let failed: Vec<String> = bundle
        .runs
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{} seed {}: {e}", r.method, r.seed)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(format!("{} run(s) failed: {}", failed.len(), failed.join("; ")))
    }
}

fn cmd_gradcheck(first: u64, seeds: u64, size: usize) -> Result<(), String> {
    let start = Instant::now();
    let reports = gradcheck_suite(first..first + seeds, size).map_err(|e| e.to_string())?;
    let tolerance = reports.first().map_or(0.0, |r| r.tolerance);
    println!("gradient check: reference model, {size}x{size} input, {seeds} seeds, tolerance {tolerance:e}");
    for (name, worst, passed) in worst_per_block(&reports) {
        println!("{name:<24} worst {worst:.3e}  {}", if passed { "PASS" } else { "FAIL" });
    }
    let passed = reports.iter().all(|r| r.passed());
    println!(
        "{} in {:.1} s",
        if passed { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    if passed {
        Ok(())
    } else {
        Err("gradient check failed".into())
    }
}

fn cmd_synth(cfg: &SynthConfig, seed: u64, out_dir: &Path) -> Result<(), String> {
    let subjects = synth_generate::<f64>(cfg, seed).map_err(|e| e.to_string())?;
    let n = write_corpus(&subjects, out_dir).map_err(|e| e.to_string())?;
    println!("wrote {n} images to {}", out_dir.display());
    Ok(())
}

fn cmd_metrics_oracle(sets: usize, max_pairs: usize, seed: u64) -> Result<(), String> {
    let failures = metrics_oracle_suite(sets, max_pairs, seed);
    for (i, msg) in &failures {
        println!("set {i}: {msg}");
    }
    println!(
        "{}: {}/{sets} scored sets match the brute-force sweep",
        if failures.is_empty() { "PASS" } else { "FAIL" },
        sets - failures.len()
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err("metric oracle mismatch".into())
    }
}
