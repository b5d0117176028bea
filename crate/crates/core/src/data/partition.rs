//! Splitting training impressions across clients.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{DataError, ImpressionRef};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionScheme {
    Iid,
    /// Each subject's impressions are split with Dirichlet(alpha) proportions.
    Dirichlet {
        alpha: f64,
    },
    /// Impressions sorted by subject are cut into `num_clients * shards`
    /// contiguous shards; each client receives `shards` of them.
    Shard {
        shards: usize,
    },
}

impl Default for PartitionScheme {
    fn default() -> Self {
        PartitionScheme::Dirichlet { alpha: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub scheme: PartitionScheme,
    /// Indexed by client id.
    pub clients: Vec<Vec<ImpressionRef>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn total(&self) -> usize {
        self.clients.iter().map(Vec::len).sum()
    }
}

/// Subjects a client holds at least two impressions of, with their counts.
fn pairable_subjects(items: &[ImpressionRef]) -> BTreeMap<usize, usize> {
    let mut counts = subject_counts(items);
    counts.retain(|_, c| *c >= 2);
    counts
}

/// Assigns every item to exactly one client. After the scheme runs, clients
/// holding fewer than two subjects with two or more impressions are repaired
/// by moving impressions over from the richest clients.
pub fn partition(
    items: &[ImpressionRef],
    num_clients: usize,
    scheme: PartitionScheme,
    seed: u64,
) -> Result<Partition, DataError> {
    if num_clients == 0 {
        return Err(DataError::InvalidArgument("num_clients must be >= 1".into()));
    }
    let mut by_subject: BTreeMap<usize, Vec<ImpressionRef>> = BTreeMap::new();
    for &item in items {
        by_subject.entry(item.subject).or_default().push(item);
    }
    let pairable = by_subject.values().filter(|v| v.len() >= 2).count();
    if pairable < 2 * num_clients {
        return Err(DataError::Infeasible(format!(
            "{num_clients} clients need {} subjects with >=2 impressions, only {pairable} available",
            2 * num_clients
        )));
    }
    let mut rng = stream(seed, &[tag::PARTITION]);
    let mut clients: Vec<Vec<ImpressionRef>> = vec![Vec::new(); num_clients];
    match scheme {
        PartitionScheme::Iid => {
            let mut all = items.to_vec();
            all.sort_unstable();
            all.shuffle(&mut rng);
            let n = all.len();
            for (k, client) in clients.iter_mut().enumerate() {
                client.extend_from_slice(&all[k * n / num_clients..(k + 1) * n / num_clients]);
            }
        }
        PartitionScheme::Dirichlet { alpha } => {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(DataError::InvalidArgument(format!(
                    "dirichlet alpha must be > 0, got {alpha}"
                )));
            }
            let gamma = Gamma::new(alpha, 1.0).map_err(|e| DataError::InvalidArgument(e.to_string()))?;
            // Rounding residue carried across subjects keeps per-client totals
            // within one impression of their expected share.
            let mut residue = vec![0.0f64; num_clients];
            for subject_items in by_subject.values() {
                let mut subject_items = subject_items.clone();
                subject_items.shuffle(&mut rng);
                let mut props: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = props.iter().sum();
                if total > 0.0 && total.is_finite() {
                    props.iter_mut().for_each(|p| *p /= total);
                } else {
                    props.fill(0.0);
                    props[rng.random_range(0..num_clients)] = 1.0;
                }
                let n = subject_items.len();
                let counts = round_with_residue(&props, n, &mut residue);
                let mut cursor = 0;
                for (client, count) in clients.iter_mut().zip(counts) {
                    client.extend_from_slice(&subject_items[cursor..cursor + count]);
                    cursor += count;
                }
            }
        }
        PartitionScheme::Shard { shards } => {
            if shards < 2 {
                return Err(DataError::InvalidArgument(format!(
                    "shards per client must be >= 2, got {shards}"
                )));
            }
            let total_shards = num_clients * shards;
            if total_shards > items.len() {
                return Err(DataError::Infeasible(format!(
                    "{total_shards} shards requested for {} impressions",
                    items.len()
                )));
            }
            let mut sorted = items.to_vec();
            sorted.sort_unstable();
            let n = sorted.len();
            let mut order: Vec<usize> = (0..total_shards).collect();
            order.shuffle(&mut rng);
            for (slot, &shard) in order.iter().enumerate() {
                let lo = shard * n / total_shards;
                let hi = (shard + 1) * n / total_shards;
                clients[slot / shards].extend_from_slice(&sorted[lo..hi]);
            }
        }
    }
    repair(&mut clients)?;
    for client in &mut clients {
        client.sort_unstable();
    }
    Ok(Partition { scheme, clients })
}

/// Integer counts summing to `n`, tracking each client's rounding debt.
fn round_with_residue(props: &[f64], n: usize, residue: &mut [f64]) -> Vec<usize> {
    let desired: Vec<f64> = props
        .iter()
        .zip(residue.iter())
        .map(|(p, r)| p * n as f64 + r)
        .collect();
    let mut counts: Vec<usize> = desired.iter().map(|d| d.max(0.0).floor() as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    while assigned < n {
        let k = (0..counts.len())
            .max_by(|&a, &b| {
                (desired[a] - counts[a] as f64)
                    .total_cmp(&(desired[b] - counts[b] as f64))
                    .then(b.cmp(&a))
            })
            .expect("at least one client");
        counts[k] += 1;
        assigned += 1;
    }
    while assigned > n {
        let k = (0..counts.len())
            .filter(|&k| counts[k] > 0)
            .min_by(|&a, &b| {
                (desired[a] - counts[a] as f64)
                    .total_cmp(&(desired[b] - counts[b] as f64))
                    .then(a.cmp(&b))
            })
            .expect("some client holds an item");
        counts[k] -= 1;
        assigned -= 1;
    }
    for ((r, d), c) in residue.iter_mut().zip(&desired).zip(&counts) {
        *r = d - *c as f64;
    }
    counts
}

fn subject_counts(items: &[ImpressionRef]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for item in items {
        *counts.entry(item.subject).or_insert(0) += 1;
    }
    counts
}

/// Moves single impressions into clients that lack two pairable subjects.
/// Donors are the richest clients that stay valid without the impression;
/// where possible the receiver hands back an unpaired impression so client
/// sizes are unchanged.
fn repair(clients: &mut [Vec<ImpressionRef>]) -> Result<(), DataError> {
    for c in 0..clients.len() {
        while pairable_subjects(&clients[c]).len() < 2 {
            let have = subject_counts(&clients[c]);
            let mut candidates: Vec<usize> = {
                let mut all: Vec<usize> = clients.iter().flatten().map(|i| i.subject).collect();
                all.sort_unstable();
                all.dedup();
                all.retain(|s| have.get(s).copied().unwrap_or(0) < 2);
                all
            };
            // Subjects the client already holds once come first.
            candidates.sort_by_key(|s| std::cmp::Reverse(have.get(s).copied().unwrap_or(0)));
            let mut moved = None;
            for &s in &candidates {
                let donor = (0..clients.len())
                    .filter(|&d| d != c)
                    .filter(|&d| {
                        let counts = subject_counts(&clients[d]);
                        match counts.get(&s).copied().unwrap_or(0) {
                            0 => false,
                            2 => counts.values().filter(|&&n| n >= 2).count() >= 3,
                            _ => true,
                        }
                    })
                    .max_by(|&a, &b| clients[a].len().cmp(&clients[b].len()).then(b.cmp(&a)));
                if let Some(d) = donor {
                    moved = Some((s, d));
                    break;
                }
            }
            let Some((s, d)) = moved else {
                return Err(DataError::Infeasible(format!(
                    "client {c} cannot reach two pairable subjects"
                )));
            };
            let pos = clients[d]
                .iter()
                .position(|i| i.subject == s)
                .expect("donor holds subject");
            let item = clients[d].remove(pos);
            clients[c].push(item);
            let counts = subject_counts(&clients[c]);
            if let Some(back) = clients[c]
                .iter()
                .position(|i| i.subject != s && counts[&i.subject] == 1)
            {
                let item = clients[c].remove(back);
                clients[d].push(item);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(subjects: usize, per: usize) -> Vec<ImpressionRef> {
        (0..subjects)
            .flat_map(|s| {
                (0..per).map(move |i| ImpressionRef {
                    subject: s,
                    impression: i,
                })
            })
            .collect()
    }

    fn assert_conserved(items: &[ImpressionRef], p: &Partition) {
        let mut all: Vec<_> = p.clients.iter().flatten().copied().collect();
        all.sort_unstable();
        let mut expect = items.to_vec();
        expect.sort_unstable();
        assert_eq!(all, expect);
    }

    #[test]
    fn single_client_gets_everything() {
        let items = grid(5, 4);
        for scheme in [PartitionScheme::Iid, PartitionScheme::Dirichlet { alpha: 0.3 }] {
            let p = partition(&items, 1, scheme, 3).unwrap();
            assert_eq!(p.clients.len(), 1);
            assert_eq!(p.clients[0].len(), 20);
        }
    }

    #[test]
    fn schemes_conserve_and_satisfy_pair_invariant() {
        let items = grid(40, 6);
        for scheme in [
            PartitionScheme::Iid,
            PartitionScheme::Dirichlet { alpha: 0.1 },
            PartitionScheme::Dirichlet { alpha: 0.3 },
            PartitionScheme::Shard { shards: 2 },
        ] {
            let p = partition(&items, 10, scheme, 42).unwrap();
            assert_conserved(&items, &p);
            for client in &p.clients {
                assert!(pairable_subjects(client).len() >= 2, "{scheme:?}");
            }
        }
    }

    #[test]
    fn large_alpha_is_nearly_balanced() {
        let items = grid(40, 6);
        for seed in 0..10 {
            let p = partition(&items, 10, PartitionScheme::Dirichlet { alpha: 1e6 }, seed).unwrap();
            for client in &p.clients {
                let dev = (client.len() as f64 - 24.0).abs() / 24.0;
                assert!(dev <= 0.10, "seed {seed}: client size {}", client.len());
            }
        }
    }

    #[test]
    fn infeasible_shard_rejected() {
        let items = grid(5, 4);
        let err = partition(&items, 3, PartitionScheme::Shard { shards: 2 }, 0).unwrap_err();
        assert!(matches!(err, DataError::Infeasible(_)));
    }

    #[test]
    fn bad_parameters_rejected() {
        let items = grid(10, 4);
        assert!(partition(&items, 0, PartitionScheme::Iid, 0).is_err());
        assert!(partition(&items, 2, PartitionScheme::Dirichlet { alpha: 0.0 }, 0).is_err());
        assert!(partition(&items, 2, PartitionScheme::Shard { shards: 1 }, 0).is_err());
    }

    #[test]
    fn residue_rounding_sums_exactly() {
        let mut residue = vec![0.0; 3];
        for _ in 0..50 {
            let counts = round_with_residue(&[0.5, 0.3, 0.2], 7, &mut residue);
            assert_eq!(counts.iter().sum::<usize>(), 7);
            assert!(residue.iter().all(|r| r.abs() < 1.0 + 1e-9));
        }
    }
}
