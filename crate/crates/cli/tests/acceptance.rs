//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fail.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::time::Instant;

use fedbio::data::{partition, ImpressionRef, PartitionScheme};
use fedbio::fed::{
    attention_aggregate, attention_weights, dp_sanitize, fedavg_aggregate, score_updates, ClientUpdate, DpConfig,
    Scorer,
};
use fedbio::nn::ParamVector;
use fedbio_cli::selftest::{gradcheck_suite, metrics_oracle_suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let reports = gradcheck_suite(0..20, 12).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.worst_rel_error()).fold(0.0, f64::max);
    let detail = format!("worst relative error {worst:.2e} over 20 seeds in {secs:.1} s");
    if reports.iter().all(|r| r.passed()) && worst < 1e-4 && secs < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_updates(rng: &mut ChaCha8Rng, equal_n: bool) -> (ParamVector<f64>, Vec<ClientUpdate<f64>>) {
    let dim = rng.random_range(1..200);
    let clients = rng.random_range(1..12);
    let n = rng.random_range(1..500);
    let global = ParamVector::flat((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    let updates = (0..clients)
        .map(|id| ClientUpdate {
            client_id: id * 3 + 1,
            delta: ParamVector::flat((0..dim).map(|_| rng.random_range(-0.5..0.5)).collect()),
            samples: if equal_n { n } else { rng.random_range(1..500) },
            local_loss: rng.random_range(0.0..2.0),
        })
        .collect();
    (global, updates)
}

fn aggregation_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (global, updates) = random_updates(&mut rng, true);
        let scores = score_updates(&updates, Scorer::Constant).map_err(|e| e.to_string())?;
        let att =
            attention_aggregate(&global, &updates, &attention_weights(&scores, 1.0)).map_err(|e| e.to_string())?;
        let avg = fedavg_aggregate(&global, &updates).map_err(|e| e.to_string())?;
        for (a, b) in att.values().iter().zip(avg.values()) {
            worst = worst.max((a - b).abs());
        }
    }
    let detail = format!("max coordinate difference {worst:.1e} over 50 update sets");
    if worst <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn softmax_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut worst_sum, mut worst_shift, mut positivity_checked) = (0.0f64, 0.0f64, 0);
    for case in 0..2000 {
        let len = rng.random_range(1..30);
        let magnitude = 10f64.powf(rng.random_range(-3.0..=3.0));
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(-magnitude..=magnitude)).collect();
        let tagged: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        let w = attention_weights(&tagged, 1.0).weights();
        if w.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(format!(
                "case {case}: non-finite or negative weight at magnitude {magnitude:.1e}"
            ));
        }
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        let spread = scores.iter().copied().fold(f64::MIN, f64::max) - scores.iter().copied().fold(f64::MAX, f64::min);
        // Beyond a spread of about 745, exp(-spread) is below the smallest f64.
        if spread < 700.0 {
            positivity_checked += 1;
            if w.iter().any(|a| *a <= 0.0) {
                return Err(format!("case {case}: zero weight at spread {spread:.1}"));
            }
        }
        let shift = rng.random_range(-1e3..1e3);
        let shifted: Vec<(usize, f64)> = scores.iter().map(|s| s + shift).enumerate().collect();
        let ws = attention_weights(&shifted, 1.0).weights();
        for (a, b) in w.iter().zip(&ws) {
            worst_shift = worst_shift.max((a - b).abs());
        }
    }
    let detail = format!(
        "2000 vectors up to magnitude 1e3: |sum-1| <= {worst_sum:.1e}, shift change <= {worst_shift:.1e}, \
         positivity on {positivity_checked}"
    );
    if worst_sum <= 1e-12 && worst_shift <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metrics_oracle() -> Outcome {
    let failures = metrics_oracle_suite(100, 200, 13);
    match failures.first() {
        None => Ok("100 scored sets (n <= 200) equal the brute-force sweep exactly".into()),
        Some((i, msg)) => Err(format!("{} mismatches, first in set {i}: {msg}", failures.len())),
    }
}

fn run_binary(config: &Path, out: &Path) -> Result<f64, String> {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_fedbio"))
        .args(["--quiet", "run"])
        .arg(config)
        .arg("--output")
        .arg(out)
        .stdout(Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("fedbio run exited with {status}"));
    }
    Ok(start.elapsed().as_secs_f64())
}

/// Mean final accuracy per method from summary.csv.
fn final_accuracy(dir: &Path) -> Result<BTreeMap<String, f64>, String> {
    let mut r = csv::Reader::from_path(dir.join("summary.csv")).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        if &rec[1] == "accuracy" {
            if &rec[4] != "5" {
                return Err(format!("{} has {} seeds", &rec[0], &rec[4]));
            }
            out.insert(rec[0].to_string(), rec[2].parse::<f64>().map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

struct Experiment {
    dir: tempfile::TempDir,
    secs: f64,
    accuracy: BTreeMap<String, f64>,
}

fn desk_experiment() -> Result<Experiment, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let secs = run_binary(&desk_config(), dir.path())?;
    let accuracy = final_accuracy(dir.path())?;
    Ok(Experiment { dir, secs, accuracy })
}

fn ordering(exp: &Result<Experiment, String>) -> Outcome {
    let exp = exp.as_ref()?;
    let acc = |m: &str| exp.accuracy.get(m).copied().ok_or(format!("no {m} row"));
    let (att, avg, local) = (acc("attention")?, acc("fedavg")?, acc("local_only")?);
    let detail = format!(
        "attention {att:.4}, fedavg {avg:.4}, local_only {local:.4} (5 seeds, {:.0} s)",
        exp.secs
    );
    if att - avg >= -0.005 && avg >= local && exp.secs < 600.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dp_bound(exp: &Result<Experiment, String>) -> Outcome {
    let exp = exp.as_ref()?;
    let att = *exp.accuracy.get("attention").ok_or("no attention row")?;
    let dp = *exp.accuracy.get("attention_dp").ok_or("no attention_dp row")?;
    let detail = format!("attention {att:.4}, attention_dp {dp:.4}, gap {:.4}", att - dp);
    if (att - dp).abs() <= 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dp_mechanism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let clip = DpConfig {
        clip_norm: 1.0,
        noise_sigma: 0.0,
    };
    let mut worst_norm = 0.0f64;
    for scale in [2.0, 0.5, 1.0, 1e3, 1e-3, 7.3] {
        let raw: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u = ClientUpdate {
            client_id: 0,
            delta: ParamVector::flat(raw.iter().map(|v| v * scale / norm).collect()),
            samples: 1,
            local_loss: 0.0,
        };
        worst_norm = worst_norm.max(dp_sanitize(&u, &clip, &mut rng).delta.l2_norm());
    }
    if worst_norm > 1.0 {
        return Err(format!("clipped norm {worst_norm} exceeds C = 1"));
    }
    let u = ClientUpdate {
        client_id: 0,
        delta: ParamVector::flat((0..10_000).map(|i| (i as f64 * 0.01).sin()).collect()),
        samples: 1,
        local_loss: 0.0,
    };
    let clipped = dp_sanitize(&u, &clip, &mut rng);
    let noisy = dp_sanitize(
        &u,
        &DpConfig {
            clip_norm: 1.0,
            noise_sigma: 0.5,
        },
        &mut rng,
    );
    let noise: Vec<f64> = noisy
        .delta
        .values()
        .iter()
        .zip(clipped.delta.values())
        .map(|(a, b)| a - b)
        .collect();
    let mean = noise.iter().sum::<f64>() / noise.len() as f64;
    let std = (noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (noise.len() - 1) as f64).sqrt();
    let detail = format!("sigma=0: max norm {worst_norm:.15} <= 1; sigma=0.5: noise std {std:.4} over 1e4 coordinates");
    if (0.48..=0.52).contains(&std) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism(first: &Result<Experiment, String>) -> Outcome {
    let first = first.as_ref()?;
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_binary(&desk_config(), second.path())?;
    let a = std::fs::read(first.dir.path().join("rounds.csv")).map_err(|e| e.to_string())?;
    let b = std::fs::read(second.path().join("rounds.csv")).map_err(|e| e.to_string())?;
    let detail = format!(
        "two runs of configs/desk.toml: rounds.csv {} and {} bytes",
        a.len(),
        b.len()
    );
    if a == b {
        Ok(format!("{detail}, identical"))
    } else {
        Err(format!("{detail}, different"))
    }
}

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for case in 0..100 {
        let subjects = rng.random_range(20..60);
        let items: Vec<ImpressionRef> = (0..subjects)
            .flat_map(|s| {
                (0..rng.random_range(2..10)).map(move |i| ImpressionRef {
                    subject: s,
                    impression: i,
                })
            })
            .collect();
        let k = ((subjects as f64 * rng.random_range(0.1..0.5)) as usize).max(1);
        let scheme = match case % 3 {
            0 => PartitionScheme::Iid,
            1 => PartitionScheme::Dirichlet {
                alpha: rng.random_range(0.05..50.0),
            },
            _ => PartitionScheme::Shard {
                shards: rng.random_range(2..4),
            },
        };
        let part = partition(&items, k, scheme, rng.random()).map_err(|e| format!("case {case}: {e}"))?;
        let mut seen: Vec<ImpressionRef> = part.clients.iter().flatten().copied().collect();
        seen.sort_unstable();
        let mut want = items.clone();
        want.sort_unstable();
        if seen != want || part.num_clients() != k {
            return Err(format!(
                "case {case} ({scheme:?}, {k} clients): assignment is not a partition"
            ));
        }
    }
    Ok("100 random configurations over iid, dirichlet and shard: every impression assigned exactly once".into())
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    };
    report("gradient suite", &mut gradient_suite);
    report("aggregation reduction", &mut aggregation_reduction);
    report("softmax invariants", &mut softmax_invariants);
    report("metrics oracle", &mut metrics_oracle);
    let experiment = desk_experiment();
    report("ordering experiment", &mut || ordering(&experiment));
    report("DP degradation bound", &mut || dp_bound(&experiment));
    report("DP mechanism", &mut dp_mechanism);
    report("determinism", &mut || determinism(&experiment));
    report("conservation", &mut conservation);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
