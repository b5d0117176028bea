//! Verification metrics over embedding distances.
//!
//! A pair is accepted iff its distance is at most the threshold. Candidate
//! thresholds are `-inf`, the midpoints between consecutive distinct
//! distances, and `+inf`.

pub mod oracle;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Pair;
use crate::nn::{Head, Mode, NnError, ParamVector, SiameseModel, Tensor};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair<T> {
    pub distance: T,
    pub matched: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Accuracy at the equal-error threshold.
    #[default]
    EerThreshold,
    /// Best accuracy over all candidate thresholds.
    BestAccuracy,
}

/// Global-model metrics after one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub accuracy: f64,
    pub mean_loss: f64,
    pub eer: f64,
    pub far: f64,
    pub frr: f64,
    pub threshold: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerPoint<T> {
    pub eer: f64,
    pub far: f64,
    pub frr: f64,
    pub threshold: T,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("scored set needs both matching and non-matching pairs ({matches} matches, {non_matches} non-matches)")]
    SingleLabel { matches: usize, non_matches: usize },
    #[error("non-finite distance")]
    NonFinite,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Embedding distance `‖emb(a) − emb(b)‖₂` of every pair, dropout off.
pub fn score_pairs<T: Scalar>(
    model: &SiameseModel,
    params: &ParamVector<T>,
    pairs: &[Pair<T>],
) -> Result<Vec<ScoredPair<T>>, NnError> {
    let mut cache: HashMap<*const Tensor<T>, Tensor<T>> = HashMap::new();
    let mut embed = |img: &Arc<Tensor<T>>| -> Result<Tensor<T>, NnError> {
        let key = Arc::as_ptr(img);
        if let Some(e) = cache.get(&key) {
            return Ok(e.clone());
        }
        let e = model.forward(params, img, Mode::Eval)?;
        cache.insert(key, e.clone());
        Ok(e)
    };
    pairs
        .iter()
        .map(|p| {
            let ea = embed(&p.a)?;
            let eb = embed(&p.b)?;
            let distance = ea
                .data()
                .iter()
                .zip(eb.data())
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<T>()
                .sqrt();
            Ok(ScoredPair {
                distance,
                matched: p.matched,
            })
        })
        .collect()
}

struct Sweep<T> {
    /// Matching distances, sorted ascending.
    genuine: Vec<T>,
    /// Non-matching distances, sorted ascending.
    impostor: Vec<T>,
    thresholds: Vec<T>,
}

impl<T: Scalar> Sweep<T> {
    fn new(scored: &[ScoredPair<T>]) -> Result<Self, MetricsError> {
        if scored.iter().any(|s| !s.distance.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
        let mut genuine: Vec<T> = scored.iter().filter(|s| s.matched).map(|s| s.distance).collect();
        let mut impostor: Vec<T> = scored.iter().filter(|s| !s.matched).map(|s| s.distance).collect();
        if genuine.is_empty() || impostor.is_empty() {
            return Err(MetricsError::SingleLabel {
                matches: genuine.len(),
                non_matches: impostor.len(),
            });
        }
        genuine.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        impostor.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Ok(Self {
            thresholds: candidate_thresholds(scored),
            genuine,
            impostor,
        })
    }

    fn rates(&self, threshold: T) -> (f64, f64, usize) {
        let accepted_genuine = self.genuine.partition_point(|&d| d <= threshold);
        let accepted_impostor = self.impostor.partition_point(|&d| d <= threshold);
        let far = accepted_impostor as f64 / self.impostor.len() as f64;
        let frr = (self.genuine.len() - accepted_genuine) as f64 / self.genuine.len() as f64;
        let correct = accepted_genuine + (self.impostor.len() - accepted_impostor);
        (far, frr, correct)
    }

    fn total(&self) -> usize {
        self.genuine.len() + self.impostor.len()
    }
}

/// `-inf`, midpoints between consecutive distinct distances, `+inf`.
pub fn candidate_thresholds<T: Scalar>(scored: &[ScoredPair<T>]) -> Vec<T> {
    let mut d: Vec<T> = scored.iter().map(|s| s.distance).collect();
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    d.dedup();
    let half = T::of(0.5);
    let mut out = Vec::with_capacity(d.len() + 1);
    out.push(T::neg_infinity());
    out.extend(d.windows(2).map(|w| (w[0] + w[1]) * half));
    out.push(T::infinity());
    out
}

/// False accept and false reject rates at `threshold`.
pub fn far_frr<T: Scalar>(scored: &[ScoredPair<T>], threshold: T) -> Result<(f64, f64), MetricsError> {
    let sweep = Sweep::new(scored)?;
    let (far, frr, _) = sweep.rates(threshold);
    Ok((far, frr))
}

/// ROC points (FAR, TPR) in ascending threshold order.
pub fn roc_curve<T: Scalar>(scored: &[ScoredPair<T>]) -> Result<Vec<RocPoint>, MetricsError> {
    let sweep = Sweep::new(scored)?;
    Ok(sweep
        .thresholds
        .iter()
        .map(|&t| {
            let (far, frr, _) = sweep.rates(t);
            RocPoint {
                threshold: t.as_f64(),
                far,
                tpr: 1.0 - frr,
            }
        })
        .collect())
}

/// Trapezoidal area under a ROC curve.
pub fn auc(roc: &[RocPoint]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].far - w[0].far) * (w[1].tpr + w[0].tpr) * 0.5)
        .sum()
}

/// Threshold minimising |FAR − FRR| (lowest on ties); EER is the mean of the two there.
pub fn eer<T: Scalar>(scored: &[ScoredPair<T>]) -> Result<EerPoint<T>, MetricsError> {
    let sweep = Sweep::new(scored)?;
    Ok(eer_from(&sweep))
}

fn eer_from<T: Scalar>(sweep: &Sweep<T>) -> EerPoint<T> {
    let mut best: Option<EerPoint<T>> = None;
    let mut best_gap = f64::INFINITY;
    for &t in &sweep.thresholds {
        let (far, frr, _) = sweep.rates(t);
        let gap = (far - frr).abs();
        if gap < best_gap {
            best_gap = gap;
            best = Some(EerPoint {
                eer: (far + frr) / 2.0,
                far,
                frr,
                threshold: t,
            });
        }
    }
    best.expect("at least the two sentinel thresholds")
}

/// Fraction of pairs classified correctly, with the threshold it used.
pub fn verification_accuracy<T: Scalar>(
    scored: &[ScoredPair<T>],
    policy: ThresholdPolicy,
) -> Result<(f64, T), MetricsError> {
    let sweep = Sweep::new(scored)?;
    Ok(accuracy_from(&sweep, policy))
}

fn accuracy_from<T: Scalar>(sweep: &Sweep<T>, policy: ThresholdPolicy) -> (f64, T) {
    let n = sweep.total() as f64;
    match policy {
        ThresholdPolicy::EerThreshold => {
            let t = eer_from(sweep).threshold;
            (sweep.rates(t).2 as f64 / n, t)
        }
        ThresholdPolicy::BestAccuracy => {
            let mut best = (0usize, sweep.thresholds[0]);
            for &t in &sweep.thresholds {
                let correct = sweep.rates(t).2;
                if correct > best.0 {
                    best = (correct, t);
                }
            }
            (best.0 as f64 / n, best.1)
        }
    }
}

/// Everything reported about one model on one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub threshold: f64,
    pub eer: f64,
    pub far: f64,
    pub frr: f64,
    pub mean_loss: f64,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
}

impl Evaluation {
    pub fn record(&self, round: usize) -> RoundRecord {
        RoundRecord {
            round,
            accuracy: self.accuracy,
            mean_loss: self.mean_loss,
            eer: self.eer,
            far: self.far,
            frr: self.frr,
            threshold: self.threshold,
            skipped: false,
        }
    }
}

/// Scores `pairs`, then reports accuracy under `policy`, the EER, FAR/FRR at
/// the accuracy threshold, and the mean contrastive loss (margin from the
/// head, or 1 for the classifier head).
pub fn evaluate<T: Scalar>(
    model: &SiameseModel,
    params: &ParamVector<T>,
    pairs: &[Pair<T>],
    policy: ThresholdPolicy,
) -> Result<Evaluation, MetricsError> {
    let scored = score_pairs(model, params, pairs)?;
    let sweep = Sweep::new(&scored)?;
    let (accuracy, threshold) = accuracy_from(&sweep, policy);
    let (far, frr, _) = sweep.rates(threshold);
    let eer = eer_from(&sweep).eer;
    let roc = roc_curve(&scored)?;
    let margin = match model.head() {
        Head::Contrastive { margin } => margin,
        Head::Classifier { .. } => 1.0,
    };
    let mut loss = 0.0;
    for s in &scored {
        let d = s.distance.as_f64();
        loss += if s.matched {
            d * d
        } else {
            (margin - d).max(0.0).powi(2)
        };
    }
    Ok(Evaluation {
        accuracy,
        threshold: threshold.as_f64(),
        eer,
        far,
        frr,
        mean_loss: loss / scored.len() as f64,
        auc: auc(&roc),
        roc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(matches: &[f64], non: &[f64]) -> Vec<ScoredPair<f64>> {
        matches
            .iter()
            .map(|&d| ScoredPair {
                distance: d,
                matched: true,
            })
            .chain(non.iter().map(|&d| ScoredPair {
                distance: d,
                matched: false,
            }))
            .collect()
    }

    #[test]
    fn extremes() {
        let s = set(&[0.1, 0.9], &[0.2, 1.5]);
        assert_eq!(far_frr(&s, 0.0).unwrap(), (0.0, 1.0));
        assert_eq!(far_frr(&s, 2.0).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn four_pair_example() {
        let s = set(&[0.1, 0.9], &[0.2, 1.5]);
        assert_eq!(far_frr(&s, 0.5).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn boundary_accepts() {
        let s = set(&[0.5], &[0.5]);
        assert_eq!(far_frr(&s, 0.5).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn single_label_rejected() {
        let s = set(&[0.1, 0.2], &[]);
        assert!(matches!(far_frr(&s, 0.1), Err(MetricsError::SingleLabel { .. })));
        assert!(roc_curve(&s).is_err());
        assert!(eer(&s).is_err());
    }

    #[test]
    fn separated_sets() {
        let s = set(&[0.1, 0.2, 0.3], &[0.7, 0.8]);
        let roc = roc_curve(&s).unwrap();
        assert!(roc.iter().any(|p| p.far == 0.0 && p.tpr == 1.0));
        assert_eq!(roc.first().map(|p| (p.far, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(roc.last().map(|p| (p.far, p.tpr)), Some((1.0, 1.0)));
        assert_eq!(auc(&roc), 1.0);
        let e = eer(&s).unwrap();
        assert_eq!(e.eer, 0.0);
        assert_eq!(e.threshold, 0.5);
        for policy in [ThresholdPolicy::EerThreshold, ThresholdPolicy::BestAccuracy] {
            assert_eq!(verification_accuracy(&s, policy).unwrap().0, 1.0);
        }
    }

    #[test]
    fn degenerate_equal_distances() {
        let s = set(&[1.0; 4], &[1.0; 4]);
        assert_eq!(eer(&s).unwrap().eer, 0.5);
        let (acc, _) = verification_accuracy(&s, ThresholdPolicy::EerThreshold).unwrap();
        assert_eq!(acc, 0.5);
    }
}
