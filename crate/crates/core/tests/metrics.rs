use std::sync::Arc;

use fedbio::data::Pair;
use fedbio::metrics::{
    auc, eer, evaluate, far_frr, oracle, roc_curve, score_pairs, verification_accuracy, ScoredPair, ThresholdPolicy,
};
use fedbio::nn::{Mode, SiameseModel, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scored sets with both labels present; a coarse grid forces distance ties.
fn scored_set() -> impl Strategy<Value = Vec<ScoredPair<f64>>> {
    (2usize..=200, any::<bool>()).prop_flat_map(|(n, coarse)| {
        prop::collection::vec((0.0f64..3.0, any::<bool>()), n).prop_map(move |raw| {
            let mut set: Vec<ScoredPair<f64>> = raw
                .into_iter()
                .map(|(d, matched)| ScoredPair {
                    distance: if coarse { (d * 4.0).round() / 4.0 } else { d },
                    matched,
                })
                .collect();
            set[0].matched = true;
            set[1].matched = false;
            set
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn fast_sweep_equals_brute_force(set in scored_set()) {
        let roc = roc_curve(&set).unwrap();
        let brute = oracle::roc(&set);
        prop_assert_eq!(roc.len(), brute.len());
        for (p, (t, far, tpr)) in roc.iter().zip(&brute) {
            prop_assert_eq!(p.threshold, *t);
            prop_assert_eq!(p.far, *far);
            prop_assert_eq!(p.tpr, *tpr);
        }
        let e = eer(&set).unwrap();
        let (oe, ot) = oracle::eer(&set);
        prop_assert_eq!(e.eer, oe);
        prop_assert_eq!(e.threshold, ot);
        for policy in [ThresholdPolicy::EerThreshold, ThresholdPolicy::BestAccuracy] {
            prop_assert_eq!(verification_accuracy(&set, policy).unwrap(), oracle::accuracy(&set, policy));
        }
        for t in oracle::thresholds(&set) {
            let (far, frr, _) = oracle::count(&set, t);
            prop_assert_eq!(far_frr(&set, t).unwrap(), (far, frr));
        }
    }

    #[test]
    fn rates_are_monotone_in_threshold(set in scored_set()) {
        let roc = roc_curve(&set).unwrap();
        prop_assert_eq!((roc[0].far, roc[0].tpr), (0.0, 0.0));
        prop_assert_eq!((roc[roc.len() - 1].far, roc[roc.len() - 1].tpr), (1.0, 1.0));
        for w in roc.windows(2) {
            prop_assert!(w[0].far <= w[1].far && w[0].tpr <= w[1].tpr);
        }
        let best = verification_accuracy(&set, ThresholdPolicy::BestAccuracy).unwrap().0;
        let at_eer = verification_accuracy(&set, ThresholdPolicy::EerThreshold).unwrap().0;
        prop_assert!(best >= at_eer);
    }

    #[test]
    fn scaling_distances_changes_nothing(set in scored_set(), c in 0.01f64..100.0) {
        let scaled: Vec<_> = set.iter().map(|s| ScoredPair { distance: s.distance * c, ..*s }).collect();
        let (a, b) = (eer(&set).unwrap(), eer(&scaled).unwrap());
        prop_assert!((a.eer - b.eer).abs() <= 1e-12);
        prop_assert!((a.threshold * c - b.threshold).abs() <= 1e-9 * c || a.threshold.is_infinite());
        prop_assert!((auc(&roc_curve(&set).unwrap()) - auc(&roc_curve(&scaled).unwrap())).abs() <= 1e-12);
        let best = |s: &[ScoredPair<f64>]| verification_accuracy(s, ThresholdPolicy::BestAccuracy).unwrap().0;
        prop_assert!((best(&set) - best(&scaled)).abs() <= 1e-12);
    }
}

#[test]
fn random_labels_give_chance_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let set: Vec<_> = (0..4000)
        .map(|_| ScoredPair {
            distance: rng.random_range(0.0..1.0),
            matched: rng.random_bool(0.5),
        })
        .collect();
    let a = auc(&roc_curve(&set).unwrap());
    assert!((a - 0.5).abs() < 0.03, "{a}");
    assert!((eer(&set).unwrap().eer - 0.5).abs() < 0.03);
}

#[test]
fn score_pairs_matches_direct_distances() {
    let model = SiameseModel::reference(12).unwrap();
    let params = model.init_params::<f64>(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let imgs: Vec<_> = (0..4)
        .map(|_| Arc::new(Tensor::from_fn(vec![12, 12], |_| rng.random_range(0.0..1.0))))
        .collect();
    let pair = |a: usize, b: usize| Pair {
        a: imgs[a].clone(),
        b: imgs[b].clone(),
        subject_a: a as u32,
        subject_b: b as u32,
        matched: a == b,
    };
    let pairs = vec![pair(0, 1), pair(1, 0), pair(2, 2), pair(3, 1)];
    let scored = score_pairs(&model, &params, &pairs).unwrap();
    assert_eq!(scored[0].distance, scored[1].distance);
    assert_eq!(scored[2].distance, 0.0);
    let emb: Vec<_> = imgs
        .iter()
        .map(|i| model.forward(&params, i, Mode::Eval).unwrap())
        .collect();
    let direct = emb[3]
        .data()
        .iter()
        .zip(emb[1].data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!((scored[3].distance - direct).abs() < 1e-12);

    let eval = evaluate(&model, &params, &pairs, ThresholdPolicy::EerThreshold).unwrap();
    let by_hand = scored
        .iter()
        .map(|s| match s.matched {
            true => s.distance.powi(2),
            false => (1.0 - s.distance).max(0.0).powi(2),
        })
        .sum::<f64>()
        / 4.0;
    assert!((eval.mean_loss - by_hand).abs() < 1e-12);
}
