//! Federated-learning simulation with game-theoretic aggregation weights.
//!
//! Each round the server collects the active clients' updates, scores every
//! pair by negated parameter distance, lets one population per client evolve
//! its choice of "whose model to back" under replicator dynamics, and uses the
//! resulting expected vote shares as averaging weights. Plain data-proportional
//! FedAvg is available as the baseline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod fl;
pub mod game;
pub mod metrics;
pub mod model;
pub mod param_space;
pub mod rng;

pub use error::{Error, Result};
pub use game::{EvalMatrix, StrategyProfile, WeightVector};
pub use param_space::{Layer, ParamVector};
