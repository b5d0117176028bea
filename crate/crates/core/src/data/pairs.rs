use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{ClientData, DataError, ImpressionRef, LabeledImage, Pair, Subject};
use crate::rng::{stream, tag};

fn make_pair<T>(data: &ClientData<'_, T>, a: ImpressionRef, b: ImpressionRef) -> Pair<T> {
    let (sa, sb) = (data.subjects[a.subject].id, data.subjects[b.subject].id);
    Pair {
        a: data.image(a).clone(),
        b: data.image(b).clone(),
        subject_a: sa,
        subject_b: sb,
        matched: a.subject == b.subject,
    }
}

/// Draws `count` pairs, `round(count * match_fraction)` of them matching.
/// A pair never uses the same impression twice.
pub fn sample_pairs<T, R: Rng + ?Sized>(
    data: &ClientData<'_, T>,
    count: usize,
    match_fraction: f64,
    rng: &mut R,
) -> Result<Vec<Pair<T>>, DataError> {
    if !(match_fraction > 0.0 && match_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "match_fraction must lie in (0, 1), got {match_fraction}"
        )));
    }
    let mut by_subject: BTreeMap<usize, Vec<ImpressionRef>> = BTreeMap::new();
    for &item in data.items {
        by_subject.entry(item.subject).or_default().push(item);
    }
    let subjects: Vec<&Vec<ImpressionRef>> = by_subject.values().collect();
    let matchable: Vec<&Vec<ImpressionRef>> = subjects.iter().copied().filter(|v| v.len() >= 2).collect();
    if subjects.len() < 2 {
        return Err(DataError::Unpairable(format!(
            "client holds {} subject(s); non-matching pairs need two",
            subjects.len()
        )));
    }
    if matchable.is_empty() {
        return Err(DataError::Unpairable("no subject with two impressions".into()));
    }
    let matches = (count as f64 * match_fraction).round() as usize;
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..matches {
        let group = matchable.choose(rng).expect("non-empty");
        let picked: Vec<&ImpressionRef> = group.choose_multiple(rng, 2).collect();
        pairs.push(make_pair(data, *picked[0], *picked[1]));
    }
    for _ in matches..count {
        let groups: Vec<&&Vec<ImpressionRef>> = subjects.choose_multiple(rng, 2).collect();
        let a = *groups[0].choose(rng).expect("non-empty");
        let b = *groups[1].choose(rng).expect("non-empty");
        pairs.push(make_pair(data, a, b));
    }
    pairs.shuffle(rng);
    Ok(pairs)
}

/// Images with their subject index as class label.
pub fn labeled_images<T>(data: &ClientData<'_, T>) -> Vec<LabeledImage<T>> {
    data.items
        .iter()
        .map(|&item| LabeledImage {
            image: data.image(item).clone(),
            label: item.subject,
        })
        .collect()
}

/// Training view plus a held-out evaluation pair set.
#[derive(Debug, Clone)]
pub struct EvalSplit<T> {
    pub train: Vec<ImpressionRef>,
    pub held_out: Vec<ImpressionRef>,
    pub eval_pairs: Vec<Pair<T>>,
}

/// Reserves `round(holdout_fraction * n)` impressions of every subject for
/// evaluation. All within-subject pairs of the reserved impressions become
/// matches; an equal number of cross-subject non-matches is drawn from the
/// same reserved pool.
pub fn split_eval<T>(subjects: &[Subject<T>], holdout_fraction: f64, seed: u64) -> Result<EvalSplit<T>, DataError> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "holdout_fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    let mut rng = stream(seed, &[tag::SPLIT]);
    let mut train = Vec::new();
    let mut held_out = Vec::new();
    let mut held_by_subject: Vec<Vec<ImpressionRef>> = Vec::new();
    for (s, subject) in subjects.iter().enumerate() {
        let n = subject.impressions.len();
        let k = ((holdout_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut held: Vec<ImpressionRef> = order[..k]
            .iter()
            .map(|&i| ImpressionRef {
                subject: s,
                impression: i,
            })
            .collect();
        held.sort_unstable();
        let mut kept: Vec<ImpressionRef> = order[k..]
            .iter()
            .map(|&i| ImpressionRef {
                subject: s,
                impression: i,
            })
            .collect();
        kept.sort_unstable();
        train.extend(kept);
        held_out.extend(held.iter().copied());
        if !held.is_empty() {
            held_by_subject.push(held);
        }
    }
    let view = ClientData::new(subjects, &held_out);
    let mut eval_pairs = Vec::new();
    for held in &held_by_subject {
        for i in 0..held.len() {
            for j in i + 1..held.len() {
                eval_pairs.push(make_pair(&view, held[i], held[j]));
            }
        }
    }
    let matches = eval_pairs.len();
    if matches == 0 || held_by_subject.len() < 2 {
        return Err(DataError::InvalidArgument(format!(
            "holdout fraction {holdout_fraction} leaves no evaluation pairs"
        )));
    }
    for _ in 0..matches {
        let groups: Vec<&Vec<ImpressionRef>> = held_by_subject.choose_multiple(&mut rng, 2).collect();
        let a = *groups[0].choose(&mut rng).expect("non-empty");
        let b = *groups[1].choose(&mut rng).expect("non-empty");
        eval_pairs.push(make_pair(&view, a, b));
    }
    Ok(EvalSplit {
        train,
        held_out,
        eval_pairs,
    })
}
