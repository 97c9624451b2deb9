//! Synchronous federated training: select, broadcast, train locally, weight,
//! aggregate, evaluate.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::dynamics::{self, DynamicsConfig};
use crate::error::{Error, Result};
use crate::game::WeightVector;
use crate::metrics::top1_accuracy;
use crate::model::{batch_loss, model_gradient, Architecture, Batch};
use crate::param_space::{weighted_average, ParamVector};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    /// Weights proportional to local sample counts.
    FedAvg,
    /// Weights from the replicator dynamics of the aggregation game.
    Gtflat,
}

impl Aggregator {
    pub fn name(&self) -> &'static str {
        match self {
            Aggregator::FedAvg => "fedavg",
            Aggregator::Gtflat => "gtflat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: usize,
    pub clients: usize,
    pub active_ratio: f64,
    pub local_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Proximal coefficient; 0 trains plain FedAvg-style clients.
    pub prox_mu: f64,
    pub aggregator: Aggregator,
    pub seed: u64,
    pub architecture: Architecture,
    pub dynamics: DynamicsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            clients: 50,
            active_ratio: 0.10,
            local_epochs: 20,
            lr: 0.05,
            batch_size: 16,
            prox_mu: 0.0,
            aggregator: Aggregator::FedAvg,
            seed: 0,
            architecture: Architecture::Softmax,
            dynamics: DynamicsConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.rounds < 1 {
            return fail("rounds must be >= 1".into());
        }
        if self.clients < 1 {
            return fail("clients must be >= 1".into());
        }
        if !(self.active_ratio > 0.0 && self.active_ratio <= 1.0) {
            return fail(format!(
                "active_ratio must be in (0, 1], got {}",
                self.active_ratio
            ));
        }
        if self.local_epochs < 1 {
            return fail("local_epochs must be >= 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return fail(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.prox_mu >= 0.0) || !self.prox_mu.is_finite() {
            return fail(format!("prox_mu must be >= 0, got {}", self.prox_mu));
        }
        self.dynamics.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub data: Dataset,
}

impl ClientState {
    pub fn n_k(&self) -> usize {
        self.data.len()
    }
}

/// All clients plus the held-out evaluation set.
#[derive(Debug, Clone)]
pub struct Federation {
    pub clients: Vec<ClientState>,
    pub test: Dataset,
}

impl Federation {
    /// Splits `train` by the given index lists; client `c` gets `parts[c]`.
    pub fn from_partition(train: &Dataset, parts: &[Vec<usize>], test: Dataset) -> Result<Self> {
        let clients = parts
            .iter()
            .enumerate()
            .map(|(id, idx)| {
                Ok(ClientState {
                    id,
                    data: train.subset(idx)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { clients, test })
    }

    fn dims(&self) -> (usize, usize) {
        (self.test.dim(), self.test.classes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: usize,
    pub active_ids: Vec<usize>,
    pub omega: WeightVector,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub wall_time: f64,
    /// SHA-256 of each active client's update, in `active_ids` order.
    pub update_digests: Vec<String>,
}

/// Number of clients drawn for a round.
pub fn active_count(m: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "active ratio {ratio} not in (0, 1]"
        )));
    }
    // 0.07 * 100 is 7.000000000000001 in binary
    let n = (ratio * m as f64 - 1e-9).ceil() as usize;
    if n < 1 || n > m {
        return Err(Error::InvalidConfig(format!(
            "{ratio} of {m} clients selects {n}"
        )));
    }
    Ok(n)
}

/// Uniform sample without replacement, sorted ascending.
pub fn select_active_users<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    ratio: f64,
) -> Result<Vec<usize>> {
    let n = active_count(m, ratio)?;
    let mut ids = rand::seq::index::sample(rng, m, n).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Local epochs of mini-batch SGD starting from the global model, with an
/// optional proximal pull `(mu/2)·‖θ − θ_global‖²`.
pub fn local_train<R: Rng + ?Sized>(
    client: &ClientState,
    global: &ParamVector,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    if client.n_k() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut theta = global.clone();
    let mut order: Vec<usize> = (0..client.n_k()).collect();
    for epoch in 0..cfg.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut grad = model_gradient(&theta, &Batch::new(&client.data, chunk))?;
            if cfg.prox_mu > 0.0 {
                grad.axpy(cfg.prox_mu, &theta);
                grad.axpy(-cfg.prox_mu, global);
            }
            theta.axpy(-cfg.lr, &grad);
        }
        if !theta.is_finite() {
            return Err(Error::Diverged(format!(
                "client {} parameters non-finite after epoch {}",
                client.id,
                epoch + 1
            )));
        }
    }
    let all: Vec<usize> = (0..client.n_k()).collect();
    let loss = batch_loss(&theta, &Batch::new(&client.data, &all))?;
    if !loss.is_finite() {
        return Err(Error::Diverged(format!(
            "client {} loss is {loss}",
            client.id
        )));
    }
    Ok(theta)
}

/// `n_k / Σ n_i` over the active clients.
pub fn fedavg_weights(active: &[&ClientState]) -> Result<WeightVector> {
    if active.is_empty() {
        return Err(Error::InvalidWeights("no active clients".into()));
    }
    let counts: Vec<f64> = active.iter().map(|c| c.n_k() as f64).collect();
    WeightVector::from_scores(&counts)
}

pub fn update_digest(p: &ParamVector) -> String {
    let mut h = Sha256::new();
    for v in p.scalars() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Top-1 accuracy and mean cross-entropy of `params` on `test`.
pub fn evaluate(params: &ParamVector, test: &Dataset) -> Result<(f64, f64)> {
    let all: Vec<usize> = (0..test.len()).collect();
    let loss = batch_loss(params, &Batch::new(test, &all))?;
    Ok((top1_accuracy(params, test)?, loss))
}

/// One synchronous round. Client updates are computed independently, then
/// weighted and aggregated in ascending client-id order.
pub fn run_round(
    fed: &Federation,
    global: &ParamVector,
    cfg: &TrainConfig,
    round: usize,
) -> Result<(ParamVector, RoundRecord)> {
    let started = Instant::now();
    let mut sel_rng = stream_rng(cfg.seed, Stream::Selection, round as u64, 0);
    let active_ids = select_active_users(&mut sel_rng, fed.clients.len(), cfg.active_ratio)?;

    let updates: Vec<ParamVector> = active_ids
        .par_iter()
        .map(|&id| {
            let mut rng = stream_rng(cfg.seed, Stream::LocalTraining, round as u64, id as u64);
            local_train(&fed.clients[id], global, cfg, &mut rng)
        })
        .collect::<Result<_>>()?;

    // barrier: every update is in before weights are computed
    let omega = match cfg.aggregator {
        Aggregator::FedAvg => {
            let active: Vec<&ClientState> = active_ids.iter().map(|&id| &fed.clients[id]).collect();
            fedavg_weights(&active)?
        }
        Aggregator::Gtflat => dynamics::solve(&updates, &cfg.dynamics)?.weights,
    };
    let next = weighted_average(&updates, &omega)?;
    let (test_accuracy, test_loss) = evaluate(&next, &fed.test)?;

    let record = RoundRecord {
        round,
        update_digests: updates.iter().map(update_digest).collect(),
        active_ids,
        omega,
        test_accuracy,
        test_loss,
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok((next, record))
}

/// Deterministic initial global model for `cfg.seed`.
pub fn initial_model(fed: &Federation, cfg: &TrainConfig) -> Result<ParamVector> {
    let (dim, classes) = fed.dims();
    cfg.architecture.init(
        dim,
        classes,
        &mut stream_rng(cfg.seed, Stream::ModelInit, 0, 0),
    )
}

/// Runs `cfg.rounds` rounds and returns the final model with every record.
pub fn train(fed: &Federation, cfg: &TrainConfig) -> Result<(ParamVector, Vec<RoundRecord>)> {
    cfg.validate()?;
    if fed.clients.len() != cfg.clients {
        return Err(Error::InvalidConfig(format!(
            "config expects {} clients, federation has {}",
            cfg.clients,
            fed.clients.len()
        )));
    }
    let mut global = initial_model(fed, cfg)?;
    let mut records = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let (next, record) = run_round(fed, &global, cfg, round)?;
        log::info!(
            "{} round {round}: acc={:.4} loss={:.4}",
            cfg.aggregator.name(),
            record.test_accuracy,
            record.test_loss
        );
        global = next;
        records.push(record);
    }
    Ok((global, records))
}

pub fn run_training(fed: &Federation, cfg: &TrainConfig) -> Result<Vec<RoundRecord>> {
    train(fed, cfg).map(|(_, records)| records)
}
