//! Brute-force reference metrics: every candidate threshold is evaluated by
//! recounting all pairs. Quadratic, but obviously correct; used by the
//! `metrics-oracle` self-test and the test suites.

use super::{ScoredPair, ThresholdPolicy};
use crate::Scalar;

pub fn thresholds<T: Scalar>(scored: &[ScoredPair<T>]) -> Vec<T> {
    let mut distinct: Vec<T> = Vec::new();
    for s in scored {
        if !distinct.contains(&s.distance) {
            distinct.push(s.distance);
        }
    }
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = vec![T::neg_infinity()];
    for i in 1..distinct.len() {
        out.push((distinct[i - 1] + distinct[i]) * T::of(0.5));
    }
    out.push(T::infinity());
    out
}

/// (FAR, FRR, correct count) by direct counting.
pub fn count<T: Scalar>(scored: &[ScoredPair<T>], threshold: T) -> (f64, f64, usize) {
    let (mut fa, mut fr, mut genuine, mut impostor) = (0usize, 0usize, 0usize, 0usize);
    for s in scored {
        let accept = s.distance <= threshold;
        if s.matched {
            genuine += 1;
            if !accept {
                fr += 1;
            }
        } else {
            impostor += 1;
            if accept {
                fa += 1;
            }
        }
    }
    (
        fa as f64 / impostor as f64,
        fr as f64 / genuine as f64,
        scored.len() - fa - fr,
    )
}

pub fn roc<T: Scalar>(scored: &[ScoredPair<T>]) -> Vec<(f64, f64, f64)> {
    thresholds(scored)
        .into_iter()
        .map(|t| {
            let (far, frr, _) = count(scored, t);
            (t.as_f64(), far, 1.0 - frr)
        })
        .collect()
}

/// (eer, threshold)
pub fn eer<T: Scalar>(scored: &[ScoredPair<T>]) -> (f64, T) {
    let mut best = (f64::INFINITY, 0.0, T::zero());
    for t in thresholds(scored) {
        let (far, frr, _) = count(scored, t);
        if (far - frr).abs() < best.0 {
            best = ((far - frr).abs(), (far + frr) / 2.0, t);
        }
    }
    (best.1, best.2)
}

pub fn accuracy<T: Scalar>(scored: &[ScoredPair<T>], policy: ThresholdPolicy) -> (f64, T) {
    let n = scored.len() as f64;
    match policy {
        ThresholdPolicy::EerThreshold => {
            let t = eer(scored).1;
            (count(scored, t).2 as f64 / n, t)
        }
        ThresholdPolicy::BestAccuracy => {
            let mut best = (0usize, T::zero());
            for (i, t) in thresholds(scored).into_iter().enumerate() {
                let c = count(scored, t).2;
                if i == 0 || c > best.0 {
                    best = (c, t);
                }
            }
            (best.0 as f64 / n, best.1)
        }
    }
}
