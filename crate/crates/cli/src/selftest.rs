//! Built-in checks behind the `gradcheck` and `metrics-oracle` subcommands.

use std::collections::BTreeMap;
use std::sync::Arc;

use fedbio::data::Pair;
use fedbio::metrics::{eer, oracle, roc_curve, verification_accuracy, ScoredPair, ThresholdPolicy};
use fedbio::nn::{gradcheck, Batch, GradcheckConfig, GradcheckReport, NnError, SiameseModel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random image pairs, alternating matched and non-matched labels.
pub fn random_pairs(seed: u64, n: usize, size: usize) -> Vec<Pair<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = || Arc::new(Tensor::from_fn(vec![size, size], |_| rng.random_range(0.0..1.0)));
    (0..n)
        .map(|i| Pair {
            a: image(),
            b: image(),
            subject_a: 0,
            subject_b: (i % 2) as u32,
            matched: i % 2 == 0,
        })
        .collect()
}

/// Gradient check of the reference architecture on `size`×`size` inputs,
/// one report per seed. Each seed draws its own parameters, batch,
/// dropout masks and sampled coordinates.
pub fn gradcheck_suite(seeds: impl IntoIterator<Item = u64>, size: usize) -> Result<Vec<GradcheckReport>, NnError> {
    let model = SiameseModel::reference(size)?;
    seeds
        .into_iter()
        .map(|seed| {
            let params = model.init_params::<f64>(seed.wrapping_add(100));
            let batch = random_pairs(seed, 4, size);
            let cfg = GradcheckConfig {
                seed,
                mask_seed: Some(seed),
                ..GradcheckConfig::default()
            };
            gradcheck(&model, &params, Batch::Pairs(&batch), &cfg)
        })
        .collect()
}

/// Worst relative error per parameter block over all reports, and whether
/// the block passed everywhere.
pub fn worst_per_block(reports: &[GradcheckReport]) -> Vec<(String, f64, bool)> {
    let mut worst: BTreeMap<usize, (String, f64, bool)> = BTreeMap::new();
    for r in reports {
        for (i, b) in r.blocks.iter().enumerate() {
            let e = worst.entry(i).or_insert((b.name.clone(), 0.0, true));
            e.1 = e.1.max(b.worst_rel_error);
            e.2 &= b.passed;
        }
    }
    worst.into_values().collect()
}

/// A scored set of `n` pairs with both labels; `coarse` quantizes the
/// distances so that ties are common.
pub fn random_scored_set(rng: &mut impl Rng, n: usize, coarse: bool) -> Vec<ScoredPair<f64>> {
    let mut set: Vec<ScoredPair<f64>> = (0..n.max(2))
        .map(|_| {
            let d: f64 = rng.random_range(0.0..3.0);
            ScoredPair {
                distance: if coarse { (d * 4.0).round() / 4.0 } else { d },
                matched: rng.random_bool(0.5),
            }
        })
        .collect();
    set[0].matched = true;
    set[1].matched = false;
    set
}

/// Compares the sorted-sweep metrics against the brute-force sweep on one
/// set; returns a description of the first mismatch.
pub fn check_against_oracle(set: &[ScoredPair<f64>]) -> Result<(), String> {
    let roc = roc_curve(set).map_err(|e| e.to_string())?;
    let brute = oracle::roc(set);
    if roc.len() != brute.len() {
        return Err(format!("roc has {} points, brute force {}", roc.len(), brute.len()));
    }
    for (p, &(t, far, tpr)) in roc.iter().zip(&brute) {
        if (p.threshold, p.far, p.tpr) != (t, far, tpr) {
            return Err(format!("roc point {p:?} vs ({t}, {far}, {tpr})"));
        }
    }
    let fast = eer(set).map_err(|e| e.to_string())?;
    let (e, t) = oracle::eer(set);
    if (fast.eer, fast.threshold) != (e, t) {
        return Err(format!("eer ({}, {}) vs ({e}, {t})", fast.eer, fast.threshold));
    }
    for policy in [ThresholdPolicy::EerThreshold, ThresholdPolicy::BestAccuracy] {
        let fast = verification_accuracy(set, policy).map_err(|e| e.to_string())?;
        let brute = oracle::accuracy(set, policy);
        if fast != brute {
            return Err(format!("{policy:?} accuracy {fast:?} vs {brute:?}"));
        }
    }
    Ok(())
}

/// Runs [`check_against_oracle`] on `sets` random sets of up to `max_n`
/// pairs; returns the failures as (set index, message).
pub fn metrics_oracle_suite(sets: usize, max_n: usize, seed: u64) -> Vec<(usize, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for i in 0..sets {
        let n = rng.random_range(2..=max_n.max(2));
        let set = random_scored_set(&mut rng, n, i % 2 == 1);
        if let Err(msg) = check_against_oracle(&set) {
            failures.push((i, msg));
        }
    }
    failures
}
