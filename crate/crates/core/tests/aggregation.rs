use fedbio::fed::{
    attention_aggregate, attention_weights, fedavg_aggregate, score_updates, ClientUpdate, FedError, Scorer,
};
use fedbio::nn::ParamVector;
use proptest::prelude::*;

fn update(id: usize, delta: Vec<f64>, samples: usize, loss: f64) -> ClientUpdate<f64> {
    ClientUpdate {
        client_id: id,
        delta: ParamVector::flat(delta),
        samples,
        local_loss: loss,
    }
}

fn score_vector() -> impl Strategy<Value = Vec<f64>> {
    (-3.0f64..3.0, 1usize..16).prop_flat_map(|(log_mag, n)| {
        let m = 10f64.powf(log_mag);
        prop::collection::vec(-m..m, n)
    })
}

fn update_set(equal_samples: bool) -> impl Strategy<Value = (Vec<f64>, Vec<ClientUpdate<f64>>)> {
    (1usize..40, 1usize..9).prop_flat_map(move |(dim, n)| {
        (
            prop::collection::vec(-5.0f64..5.0, dim),
            prop::collection::vec((prop::collection::vec(-2.0f64..2.0, dim), 1usize..50), n),
        )
            .prop_map(move |(global, raw)| {
                let updates = raw
                    .into_iter()
                    .enumerate()
                    .map(|(i, (d, s))| update(i * 3 + 1, d, if equal_samples { 10 } else { s }, 0.0))
                    .collect();
                (global, updates)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn softmax_is_a_distribution(scores in score_vector(), shift in -1e3f64..1e3) {
        let tagged: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        let w = attention_weights(&tagged, 1.0).weights();
        prop_assert!(w.iter().all(|a| a.is_finite() && *a >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let spread = scores.iter().cloned().fold(f64::MIN, f64::max) - scores.iter().cloned().fold(f64::MAX, f64::min);
        // exp underflows to zero in f64 beyond a spread of about 745.
        if spread < 700.0 {
            prop_assert!(w.iter().all(|a| *a > 0.0));
        }
        let shifted: Vec<(usize, f64)> = scores.iter().map(|s| s + shift).enumerate().collect();
        let ws = attention_weights(&shifted, 1.0).weights();
        for (a, b) in w.iter().zip(&ws) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn uniform_attention_reduces_to_fedavg((global, updates) in update_set(true)) {
        let global = ParamVector::flat(global);
        let scores = score_updates(&updates, Scorer::Constant).unwrap();
        let att = attention_aggregate(&global, &updates, &attention_weights(&scores, 1.0)).unwrap();
        let avg = fedavg_aggregate(&global, &updates).unwrap();
        for (a, b) in att.values().iter().zip(avg.values()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn aggregates_stay_in_the_client_envelope((global, updates) in update_set(false), tau in 0.1f64..10.0) {
        let global = ParamVector::flat(global);
        let locals: Vec<Vec<f64>> = updates
            .iter()
            .map(|u| global.values().iter().zip(u.delta.values()).map(|(g, d)| g + d).collect())
            .collect();
        let scores = score_updates(&updates, Scorer::UpdateSimilarity).unwrap();
        let weights = attention_weights(&scores, tau);
        let att = attention_aggregate(&global, &updates, &weights).unwrap();
        let avg = fedavg_aggregate(&global, &updates).unwrap();
        for agg in [&att, &avg] {
            for (j, v) in agg.values().iter().enumerate() {
                let lo = locals.iter().map(|l| l[j]).fold(f64::INFINITY, f64::min);
                let hi = locals.iter().map(|l| l[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn lower_local_loss_gets_more_weight(losses in prop::collection::vec(0.0f64..5.0, 2..10)) {
        let updates: Vec<_> = losses.iter().enumerate().map(|(i, &l)| update(i, vec![1.0], 5, l)).collect();
        let w = attention_weights(&score_updates(&updates, Scorer::NegLocalLoss).unwrap(), 1.0);
        for a in &updates {
            for b in &updates {
                if a.local_loss < b.local_loss {
                    prop_assert!(w.weight_of(a.client_id).unwrap() > w.weight_of(b.client_id).unwrap());
                }
            }
        }
    }
}

#[test]
fn extreme_scores_do_not_overflow() {
    let w = attention_weights(&[(0, 1000.0), (1, 0.0)], 1.0).weights();
    assert_eq!(w[0], 1.0);
    assert!(w[1] >= 0.0 && w[1] < 1e-300);
    let w = attention_weights(&[(0, -1000.0), (1, -1000.0), (2, -1000.0)], 1.0).weights();
    for a in w {
        assert!((a - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn ln3_gives_one_quarter_three_quarters() {
    let w = attention_weights(&[(4, 0.0), (9, 3f64.ln())], 1.0).weights();
    assert!((w[0] - 0.25).abs() < 1e-15);
    assert!((w[1] - 0.75).abs() < 1e-15);
}

#[test]
fn one_hot_weight_recovers_client_params() {
    let global = ParamVector::flat(vec![1.0, -2.0, 0.5]);
    let updates = vec![
        update(0, vec![0.1, 0.2, 0.3], 3, 0.0),
        update(1, vec![-1.0, 4.0, 2.0], 7, 0.0),
    ];
    let w = attention_weights(&[(0, -1e6), (1, 0.0)], 1.0);
    let out = attention_aggregate(&global, &updates, &w).unwrap();
    assert_eq!(out.values(), &[0.0, 2.0, 2.5]);
}

#[test]
fn weights_for_other_clients_are_rejected() {
    let global = ParamVector::flat(vec![0.0]);
    let updates = vec![update(0, vec![1.0], 1, 0.0), update(1, vec![2.0], 1, 0.0)];
    let w = attention_weights(&[(0, 0.0), (5, 0.0)], 1.0);
    assert!(matches!(
        attention_aggregate(&global, &updates, &w),
        Err(FedError::WeightMismatch(_))
    ));
}

#[test]
fn similarity_scores_follow_the_mean_direction() {
    let same = vec![update(0, vec![1.0, 2.0], 1, 0.0), update(1, vec![1.0, 2.0], 1, 0.0)];
    for (_, s) in score_updates(&same, Scorer::UpdateSimilarity).unwrap() {
        assert!((s - 1.0).abs() < 1e-12);
    }
    // The mean of (2, 1) and (0, -1) is (1, 0), orthogonal to the second.
    let mixed = vec![update(0, vec![2.0, 1.0], 1, 0.0), update(1, vec![0.0, -1.0], 1, 0.0)];
    let s = score_updates(&mixed, Scorer::UpdateSimilarity).unwrap();
    assert!((s[0].1 - 2.0 / 5f64.sqrt()).abs() < 1e-12);
    assert!(s[1].1.abs() < 1e-15);
}
