//! Federation engine: local client training, server-side aggregation
//! (FedAvg and attention weighting), client-side differential privacy and
//! the local-only / centralized baselines.

mod aggregate;
mod client;
mod dp;
mod runner;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::metrics::{MetricsError, ThresholdPolicy};
use crate::nn::{NnError, ParamVector};

pub use aggregate::{
    attention_aggregate, attention_weights, fedavg_aggregate, score_updates, AttentionEntry, AttentionWeights,
};
pub use client::local_train;
pub use dp::dp_sanitize;
pub use runner::{initial_params, run_centralized, run_federated, run_local_only, Federation, RunOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    FedAvg,
    #[default]
    Attention,
}

/// Relevance score `e_i` feeding the attention softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// Cosine similarity between a client's delta and the round's mean delta.
    #[default]
    UpdateSimilarity,
    /// Negative held-in loss after local training.
    NegLocalLoss,
    /// Every client scores 0, i.e. uniform weights.
    Constant,
}

/// Clip-then-noise mechanism applied to each client delta before upload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpConfig {
    /// L2 bound on the delta.
    pub clip_norm: f64,
    /// Per-coordinate Gaussian noise standard deviation.
    pub noise_sigma: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            clip_norm: 1.0,
            noise_sigma: 0.5,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(FedError::InvalidConfig(format!(
                "clip_norm must be > 0, got {}",
                self.clip_norm
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(FedError::InvalidConfig(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedConfig {
    pub num_clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Chosen per method by the experiment runner, never read from config files.
    #[serde(skip)]
    pub aggregator: Aggregator,
    pub scorer: Scorer,
    /// Softmax temperature; 1 gives plain `exp(e_i) / Σ exp(e_j)`.
    pub temperature: f64,
    /// Training pairs drawn per client impression each round.
    pub pairs_per_impression: usize,
    pub match_fraction: f64,
    pub threshold_policy: ThresholdPolicy,
    /// Taken from the experiment's seed list, never read from config files.
    #[serde(skip)]
    pub seed: u64,
    /// Set per method by the experiment runner, never read from config files.
    #[serde(skip)]
    pub dp: Option<DpConfig>,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            num_clients: 20,
            clients_per_round: 5,
            rounds: 100,
            local_epochs: 5,
            batch_size: 32,
            learning_rate: 0.001,
            aggregator: Aggregator::Attention,
            scorer: Scorer::UpdateSimilarity,
            temperature: 1.0,
            pairs_per_impression: 4,
            match_fraction: 0.5,
            threshold_policy: ThresholdPolicy::EerThreshold,
            seed: 0,
            dp: None,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        let bad = |m: String| Err(FedError::InvalidConfig(m));
        if self.num_clients == 0 {
            return bad("num_clients must be >= 1".into());
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return bad(format!(
                "clients_per_round must be in 1..={} (num_clients), got {}",
                self.num_clients, self.clients_per_round
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.pairs_per_impression == 0 {
            return bad("pairs_per_impression must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.match_fraction > 0.0 && self.match_fraction < 1.0) {
            return bad(format!(
                "match_fraction must lie in (0, 1), got {}",
                self.match_fraction
            ));
        }
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        Ok(())
    }
}

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate<T> {
    pub client_id: usize,
    /// Local parameters minus the global parameters the client started from.
    pub delta: ParamVector<T>,
    /// Training impressions held by the client.
    pub samples: usize,
    /// Loss on the client's held-in pair slice after local training.
    pub local_loss: f64,
}

#[derive(Debug, Error)]
pub enum FedError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no client updates to aggregate")]
    EmptyRound,
    #[error("attention weights do not cover the update set: {0}")]
    WeightMismatch(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
