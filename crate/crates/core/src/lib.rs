//! Federated training of a Siamese verification network with attention
//! weighted aggregation, FedAvg and non-federated baselines, optional
//! client-side differential privacy, and verification metrics.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix the precision used by the experiment runner.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod fed;
pub mod metrics;
pub mod nn;
pub mod rng;
mod scalar;

pub use scalar::Scalar;

pub type Tensor64 = nn::Tensor<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Params64 = nn::ParamVector<f64>;
pub type Params32 = nn::ParamVector<f32>;
pub type Subject64 = data::Subject<f64>;
pub type Pair64 = data::Pair<f64>;
pub type ClientUpdate64 = fed::ClientUpdate<f64>;
pub type ScoredPair64 = metrics::ScoredPair<f64>;
