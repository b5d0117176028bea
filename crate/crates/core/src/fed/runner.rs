use rand::seq::index::sample;
use rayon::prelude::*;

use super::{
    attention_aggregate, attention_weights, dp_sanitize, fedavg_aggregate, local_train, score_updates, Aggregator,
    AttentionWeights, ClientUpdate, FedConfig, FedError,
};
use crate::data::{ClientData, DataError, ImpressionRef, Pair, Partition, Subject};
use crate::metrics::{evaluate, Evaluation, RocPoint, RoundRecord};
use crate::nn::{ParamVector, SiameseModel};
use crate::rng::{stream, tag};
use crate::Scalar;

/// Everything a training run reads; shared unchanged by all methods of a seed.
#[derive(Debug, Clone, Copy)]
pub struct Federation<'a, T> {
    pub model: &'a SiameseModel,
    pub subjects: &'a [Subject<T>],
    pub partition: &'a Partition,
    pub eval_pairs: &'a [Pair<T>],
    pub init: &'a ParamVector<T>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    /// ROC curves of the final model(s); one per client for local-only.
    pub final_rocs: Vec<Vec<RocPoint>>,
    /// Attention weights per executed round (attention aggregator only).
    pub attention: Vec<AttentionWeights>,
}

/// A client's model after a local-only round and its evaluation; `None`
/// once the client has dropped out.
type Trained<T> = Option<(ParamVector<T>, Evaluation)>;

fn is_unpairable(e: &FedError) -> bool {
    matches!(e, FedError::Data(DataError::Unpairable(_)))
}

fn collect_updates<T: Scalar>(
    results: Vec<Result<ClientUpdate<T>, FedError>>,
    round: usize,
) -> Result<Vec<ClientUpdate<T>>, FedError> {
    let mut updates = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(u) => updates.push(u),
            Err(e) if is_unpairable(&e) => log::warn!("round {round}: client excluded: {e}"),
            Err(e) => return Err(e),
        }
    }
    Ok(updates)
}

/// Federated training: each round samples `clients_per_round` clients
/// without replacement, trains them from the current global model,
/// optionally sanitizes their deltas, aggregates, and evaluates.
pub fn run_federated<T: Scalar>(fed: &Federation<'_, T>, cfg: &FedConfig) -> Result<RunOutput, FedError> {
    cfg.validate()?;
    check_partition(fed, cfg)?;
    let mut global = fed.init.clone();
    let mut out = RunOutput::default();
    let mut last: Option<RoundRecord> = None;
    for round in 0..cfg.rounds {
        let mut picker = stream(cfg.seed, &[tag::SAMPLE_CLIENTS, round as u64]);
        let mut chosen = sample(&mut picker, cfg.num_clients, cfg.clients_per_round).into_vec();
        chosen.sort_unstable();
        let results: Vec<_> = chosen
            .par_iter()
            .map(|&c| {
                let data = ClientData::new(fed.subjects, &fed.partition.clients[c]);
                let update = local_train(fed.model, &global, data, cfg, round, c)?;
                Ok(match &cfg.dp {
                    Some(dp) => {
                        let mut rng = stream(cfg.seed, &[tag::DP_NOISE, round as u64, c as u64]);
                        dp_sanitize(&update, dp, &mut rng)
                    }
                    None => update,
                })
            })
            .collect();
        let updates = collect_updates(results, round)?;
        if updates.is_empty() {
            log::warn!("round {round}: every sampled client was excluded; round skipped");
            let mut rec = match last {
                Some(r) => r,
                None => evaluate(fed.model, &global, fed.eval_pairs, cfg.threshold_policy)?.record(round + 1),
            };
            rec.round = round + 1;
            rec.skipped = true;
            out.records.push(rec);
            last = Some(rec);
            continue;
        }
        global = match cfg.aggregator {
            Aggregator::FedAvg => fedavg_aggregate(&global, &updates)?,
            Aggregator::Attention => {
                let scores = score_updates(&updates, cfg.scorer)?;
                let weights = attention_weights(&scores, cfg.temperature);
                let next = attention_aggregate(&global, &updates, &weights)?;
                out.attention.push(weights);
                next
            }
        };
        let eval = evaluate(fed.model, &global, fed.eval_pairs, cfg.threshold_policy)?;
        let rec = eval.record(round + 1);
        out.records.push(rec);
        last = Some(rec);
        if round + 1 == cfg.rounds {
            out.final_rocs.push(eval.roc);
        }
    }
    if cfg.rounds == 0 || out.final_rocs.is_empty() {
        out.final_rocs
            .push(evaluate(fed.model, &global, fed.eval_pairs, cfg.threshold_policy)?.roc);
    }
    Ok(out)
}

/// Every client trains alone for the whole budget. Each round's record is
/// the unweighted mean of the per-client evaluations.
pub fn run_local_only<T: Scalar>(fed: &Federation<'_, T>, cfg: &FedConfig) -> Result<RunOutput, FedError> {
    cfg.validate()?;
    check_partition(fed, cfg)?;
    let mut models: Vec<Option<ParamVector<T>>> = vec![Some(fed.init.clone()); cfg.num_clients];
    let mut out = RunOutput::default();
    let mut evals: Vec<Option<Evaluation>> = vec![None; cfg.num_clients];
    for round in 0..cfg.rounds {
        let results: Vec<Result<Trained<T>, FedError>> = models
            .par_iter()
            .enumerate()
            .map(|(c, params)| {
                let Some(params) = params else { return Ok(None) };
                let data = ClientData::new(fed.subjects, &fed.partition.clients[c]);
                match local_train(fed.model, params, data, cfg, round, c) {
                    Ok(update) => {
                        let mut next = params.clone();
                        next.axpy(T::one(), &update.delta)?;
                        let eval = evaluate(fed.model, &next, fed.eval_pairs, cfg.threshold_policy)?;
                        Ok(Some((next, eval)))
                    }
                    Err(e) if is_unpairable(&e) => {
                        log::warn!("local-only client {c} excluded: {e}");
                        Ok(None)
                    }
                    Err(e) => Err(e),
                }
            })
            .collect();
        for (c, r) in results.into_iter().enumerate() {
            match r? {
                Some((p, e)) => {
                    models[c] = Some(p);
                    evals[c] = Some(e);
                }
                None => {
                    models[c] = None;
                    evals[c] = None;
                }
            }
        }
        let present: Vec<&Evaluation> = evals.iter().flatten().collect();
        if present.is_empty() {
            return Err(FedError::EmptyRound);
        }
        out.records.push(mean_record(&present, round + 1));
    }
    out.final_rocs = match cfg.rounds {
        0 => vec![evaluate(fed.model, fed.init, fed.eval_pairs, cfg.threshold_policy)?.roc],
        _ => evals.into_iter().flatten().map(|e| e.roc).collect(),
    };
    Ok(out)
}

fn mean_record(evals: &[&Evaluation], round: usize) -> RoundRecord {
    let n = evals.len() as f64;
    let mean = |f: fn(&Evaluation) -> f64| evals.iter().map(|e| f(e)).sum::<f64>() / n;
    RoundRecord {
        round,
        accuracy: mean(|e| e.accuracy),
        mean_loss: mean(|e| e.mean_loss),
        eer: mean(|e| e.eer),
        far: mean(|e| e.far),
        frr: mean(|e| e.frr),
        threshold: mean(|e| e.threshold),
        skipped: false,
    }
}

/// All training impressions pooled on one node; one round is
/// `local_epochs` epochs with the same optimizer settings. The node draws
/// from client 0's random streams, so a one-client partition reproduces
/// the local-only run exactly.
pub fn run_centralized<T: Scalar>(fed: &Federation<'_, T>, cfg: &FedConfig) -> Result<RunOutput, FedError> {
    cfg.validate()?;
    let mut pooled: Vec<ImpressionRef> = fed.partition.clients.iter().flatten().copied().collect();
    pooled.sort_unstable();
    let data = ClientData::new(fed.subjects, &pooled);
    let mut params = fed.init.clone();
    let mut out = RunOutput::default();
    let mut last_roc = None;
    for round in 0..cfg.rounds {
        let update = local_train(fed.model, &params, data, cfg, round, 0)?;
        params.axpy(T::one(), &update.delta)?;
        let eval = evaluate(fed.model, &params, fed.eval_pairs, cfg.threshold_policy)?;
        out.records.push(eval.record(round + 1));
        last_roc = Some(eval.roc);
    }
    let roc = match last_roc {
        Some(r) => r,
        None => evaluate(fed.model, &params, fed.eval_pairs, cfg.threshold_policy)?.roc,
    };
    out.final_rocs.push(roc);
    Ok(out)
}

fn check_partition<T>(fed: &Federation<'_, T>, cfg: &FedConfig) -> Result<(), FedError> {
    if fed.partition.num_clients() != cfg.num_clients {
        return Err(FedError::InvalidConfig(format!(
            "partition has {} clients but num_clients = {}",
            fed.partition.num_clients(),
            cfg.num_clients
        )));
    }
    Ok(())
}

/// Global initial parameters for a run seed; every method of that seed
/// starts from this vector.
pub fn initial_params<T: Scalar>(model: &SiameseModel, seed: u64) -> ParamVector<T> {
    model.init_params(crate::rng::derive_seed(seed, &[tag::INIT]))
}
