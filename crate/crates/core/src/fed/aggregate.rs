use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ClientUpdate, FedError, Scorer};
use crate::nn::ParamVector;
use crate::Scalar;

/// `global + Σ (n_i / N) · delta_i`, the delta form of sample-weighted averaging.
pub fn fedavg_aggregate<T: Scalar>(
    global: &ParamVector<T>,
    updates: &[ClientUpdate<T>],
) -> Result<ParamVector<T>, FedError> {
    if updates.is_empty() {
        return Err(FedError::EmptyRound);
    }
    let total: usize = updates.iter().map(|u| u.samples).sum();
    let mut next = global.clone();
    for u in updates {
        next.axpy(T::of(u.samples as f64 / total as f64), &u.delta)?;
    }
    Ok(next)
}

/// Relevance score per client, in update order.
pub fn score_updates<T: Scalar>(updates: &[ClientUpdate<T>], scorer: Scorer) -> Result<Vec<(usize, f64)>, FedError> {
    let scores = match scorer {
        Scorer::NegLocalLoss => updates.iter().map(|u| (u.client_id, -u.local_loss)).collect(),
        Scorer::Constant => updates.iter().map(|u| (u.client_id, 0.0)).collect(),
        Scorer::UpdateSimilarity => {
            let Some(first) = updates.first() else {
                return Ok(Vec::new());
            };
            let mut mean = ParamVector::zeros(first.delta.layout().clone());
            let inv = T::one() / T::of(updates.len() as f64);
            for u in updates {
                mean.axpy(inv, &u.delta)?;
            }
            let mean_norm = mean.l2_norm().as_f64();
            updates
                .iter()
                .map(|u| {
                    let norm = u.delta.l2_norm().as_f64();
                    let score = if norm == 0.0 || mean_norm == 0.0 {
                        0.0
                    } else {
                        (u.delta.dot(&mean)?.as_f64() / (norm * mean_norm)).clamp(-1.0, 1.0)
                    };
                    Ok((u.client_id, score))
                })
                .collect::<Result<_, FedError>>()?
        }
    };
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionEntry {
    pub client_id: usize,
    pub score: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub entries: Vec<AttentionEntry>,
}

impl AttentionWeights {
    pub fn weight_of(&self, client_id: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.client_id == client_id).map(|e| e.weight)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }
}

/// `α_i = exp(e_i/τ) / Σ_j exp(e_j/τ)`, computed after subtracting the max score.
pub fn attention_weights(scores: &[(usize, f64)], temperature: f64) -> AttentionWeights {
    let max = scores
        .iter()
        .map(|s| s.1 / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s.1 / temperature - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    AttentionWeights {
        entries: scores
            .iter()
            .zip(exps)
            .map(|(&(client_id, score), e)| AttentionEntry {
                client_id,
                score,
                weight: e / total,
            })
            .collect(),
    }
}

/// `global + Σ α_i · delta_i`.
pub fn attention_aggregate<T: Scalar>(
    global: &ParamVector<T>,
    updates: &[ClientUpdate<T>],
    weights: &AttentionWeights,
) -> Result<ParamVector<T>, FedError> {
    if updates.is_empty() {
        return Err(FedError::EmptyRound);
    }
    let by_id: BTreeMap<usize, f64> = weights.entries.iter().map(|e| (e.client_id, e.weight)).collect();
    if by_id.len() != weights.entries.len() || by_id.len() != updates.len() {
        return Err(FedError::WeightMismatch(format!(
            "{} weights for {} updates",
            weights.entries.len(),
            updates.len()
        )));
    }
    let mut next = global.clone();
    for u in updates {
        let alpha = by_id
            .get(&u.client_id)
            .ok_or_else(|| FedError::WeightMismatch(format!("no weight for client {}", u.client_id)))?;
        next.axpy(T::of(*alpha), &u.delta)?;
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn update(id: usize, delta: Vec<f64>, samples: usize, loss: f64) -> ClientUpdate<f64> {
        ClientUpdate {
            client_id: id,
            delta: ParamVector::flat(delta),
            samples,
            local_loss: loss,
        }
    }

    fn same_layout(global: &ParamVector<f64>, mut u: ClientUpdate<f64>) -> ClientUpdate<f64> {
        u.delta = ParamVector::from_values(global.layout().clone(), u.delta.values().to_vec()).unwrap();
        u
    }

    #[test]
    fn fedavg_examples() {
        let g = ParamVector::flat(vec![0.0]);
        let ups = vec![
            same_layout(&g, update(0, vec![0.0], 1, 0.0)),
            same_layout(&g, update(1, vec![1.0], 1, 0.0)),
        ];
        assert_eq!(fedavg_aggregate(&g, &ups).unwrap().values(), &[0.5]);
        let ups = vec![
            same_layout(&g, update(0, vec![0.0], 1, 0.0)),
            same_layout(&g, update(1, vec![1.0], 3, 0.0)),
        ];
        assert_eq!(fedavg_aggregate(&g, &ups).unwrap().values(), &[0.75]);
    }

    #[test]
    fn fedavg_single_client_is_its_local_model() {
        let g = ParamVector::flat(vec![0.5, -1.25, 3.0]);
        let local = [0.75, -1.0, 2.5];
        let delta = local.iter().zip(g.values()).map(|(l, g)| l - g).collect();
        let u = same_layout(&g, update(4, delta, 7, 0.1));
        assert_eq!(fedavg_aggregate(&g, &[u]).unwrap().values(), &local);
    }

    #[test]
    fn fedavg_empty_round() {
        let g = ParamVector::flat(vec![0.0]);
        assert!(matches!(fedavg_aggregate(&g, &[]), Err(FedError::EmptyRound)));
    }

    #[test]
    fn cosine_scores() {
        let g = ParamVector::flat(vec![0.0, 0.0]);
        let same: Vec<_> = (0..3)
            .map(|i| same_layout(&g, update(i, vec![1.0, 2.0], 1, 0.0)))
            .collect();
        for (_, s) in score_updates(&same, Scorer::UpdateSimilarity).unwrap() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        // mean of (1,0), (1,0), (-1, 0)... choose deltas so one is orthogonal to the mean.
        let ups = vec![
            same_layout(&g, update(0, vec![2.0, 0.0], 1, 0.0)),
            same_layout(&g, update(1, vec![0.0, 3.0], 1, 0.0)),
            same_layout(&g, update(2, vec![1.0, -3.0], 1, 0.0)),
        ];
        let s = score_updates(&ups, Scorer::UpdateSimilarity).unwrap();
        assert!(s[1].1.abs() < 1e-15, "mean is (1, 0); (0, 3) is orthogonal");
        let zero = vec![same_layout(&g, update(0, vec![0.0, 0.0], 1, 0.0))];
        assert_eq!(score_updates(&zero, Scorer::UpdateSimilarity).unwrap()[0].1, 0.0);
    }

    #[test]
    fn neg_loss_scores_rank_lower_loss_first() {
        let g = ParamVector::flat(vec![0.0]);
        let ups = vec![
            same_layout(&g, update(1, vec![0.0], 1, 0.2)),
            same_layout(&g, update(2, vec![0.0], 1, 0.9)),
        ];
        let s = score_updates(&ups, Scorer::NegLocalLoss).unwrap();
        assert_eq!(s, vec![(1, -0.2), (2, -0.9)]);
        let w = attention_weights(&s, 1.0);
        assert!(w.weight_of(1).unwrap() > w.weight_of(2).unwrap());
    }

    #[test]
    fn softmax_examples() {
        let w = attention_weights(&[(0, 0.3), (1, 0.3), (2, 0.3), (3, 0.3)], 1.0);
        assert!(w.weights().iter().all(|&a| (a - 0.25).abs() < 1e-15));
        let w = attention_weights(&[(0, 0.0), (1, 3f64.ln())], 1.0);
        assert!((w.weights()[0] - 0.25).abs() < 1e-15 && (w.weights()[1] - 0.75).abs() < 1e-15);
        let w = attention_weights(&[(0, 1000.0), (1, 0.0)], 1.0);
        assert_eq!(w.weights()[0], 1.0);
        assert!(w.weights()[1] >= 0.0 && w.weights()[1] < 1e-300);
    }

    #[test]
    fn attention_arithmetic() {
        let g = ParamVector::flat(vec![0.0]);
        let ups = vec![
            same_layout(&g, update(0, vec![4.0], 1, 0.0)),
            same_layout(&g, update(1, vec![0.0], 1, 0.0)),
        ];
        let w = AttentionWeights {
            entries: vec![
                AttentionEntry {
                    client_id: 0,
                    score: 0.0,
                    weight: 0.25,
                },
                AttentionEntry {
                    client_id: 1,
                    score: 0.0,
                    weight: 0.75,
                },
            ],
        };
        assert_eq!(attention_aggregate(&g, &ups, &w).unwrap().values(), &[1.0]);
    }

    #[test]
    fn onehot_attention_selects_client() {
        let g = ParamVector::flat(vec![1.0, 2.0]);
        let ups = vec![
            same_layout(&g, update(0, vec![4.0, -1.0], 3, 0.0)),
            same_layout(&g, update(5, vec![0.5, 0.25], 9, 0.0)),
        ];
        let w = AttentionWeights {
            entries: vec![
                AttentionEntry {
                    client_id: 0,
                    score: 0.0,
                    weight: 0.0,
                },
                AttentionEntry {
                    client_id: 5,
                    score: 0.0,
                    weight: 1.0,
                },
            ],
        };
        assert_eq!(attention_aggregate(&g, &ups, &w).unwrap().values(), &[1.5, 2.25]);
    }

    #[test]
    fn weight_id_mismatch_rejected() {
        let g = ParamVector::flat(vec![0.0]);
        let ups = vec![same_layout(&g, update(0, vec![1.0], 1, 0.0))];
        let w = attention_weights(&[(3, 0.0)], 1.0);
        assert!(matches!(
            attention_aggregate(&g, &ups, &w),
            Err(FedError::WeightMismatch(_))
        ));
        let w = attention_weights(&[(0, 0.0), (1, 0.0)], 1.0);
        assert!(matches!(
            attention_aggregate(&g, &ups, &w),
            Err(FedError::WeightMismatch(_))
        ));
    }
}
