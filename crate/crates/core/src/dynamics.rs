//! Multi-population replicator dynamics for the aggregation game.
//!
//! One population per player; population `i` splits its mass over the other
//! players' models. After a fixed number of generations the expected vote
//! shares become the aggregation weights.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{build_eval_matrix, weights_from_state, EvalMatrix, WeightVector, SIMPLEX_TOL};
use crate::param_space::ParamVector;

/// Slack added on top of the largest `|phi|` by [`FitnessShift::Auto`].
pub const AUTO_SHIFT_EPS: f64 = 1e-6;

/// `X[i][j]`: share of population `i` playing model `j`. Diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    k: usize,
    x: Vec<f64>,
}

impl PopulationState {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::InvalidState(format!("need k >= 2, got {k}")));
        }
        let mut x = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidState(format!(
                    "row {i} has {} entries",
                    row.len()
                )));
            }
            x.extend_from_slice(row);
        }
        let s = Self { k, x };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.k {
            let row = self.row(i);
            if row[i] != 0.0 {
                return Err(Error::InvalidState(format!("population {i} plays itself")));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidState(format!(
                    "population {i} has negative mass"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidState(format!("population {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// Every population split evenly over its `k − 1` strategies.
    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidState(format!("need k >= 2, got {k}")));
        }
        let share = 1.0 / (k - 1) as f64;
        let x = (0..k * k)
            .map(|n| if n / k == n % k { 0.0 } else { share })
            .collect();
        Ok(Self { k, x })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.x.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let rows = (0..self.k)
            .map(|a| (0..self.k).map(|b| self.get(perm[a], perm[b])).collect())
            .collect();
        Self::from_rows(rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitnessShift {
    /// `max |phi| + AUTO_SHIFT_EPS`, the smallest shift keeping every
    /// fitness positive.
    Auto,
    Fixed(f64),
}

impl FitnessShift {
    pub fn resolve(&self, phi: &EvalMatrix) -> f64 {
        match *self {
            FitnessShift::Auto => phi.max_abs() + AUTO_SHIFT_EPS,
            FitnessShift::Fixed(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsMode {
    /// Discrete-time replicator at step `tau`.
    Discrete,
    /// Forward-Euler integration of the continuous replicator with step `tau`.
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub generations: usize,
    pub tau: f64,
    pub fitness_shift: FitnessShift,
    pub stationarity_tol: f64,
    pub mode: DynamicsMode,
    /// Stop as soon as the state is stationary at `stationarity_tol`.
    pub early_exit: bool,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            generations: 50,
            tau: 1.0,
            fitness_shift: FitnessShift::Auto,
            stationarity_tol: 1e-8,
            mode: DynamicsMode::Discrete,
            early_exit: false,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.generations < 1 {
            return Err(Error::InvalidConfig("generations must be >= 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if !(self.stationarity_tol > 0.0) {
            return Err(Error::InvalidConfig("stationarity_tol must be > 0".into()));
        }
        if let FitnessShift::Fixed(c) = self.fitness_shift {
            if !(c >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "fitness shift must be >= 0, got {c}"
                )));
            }
        }
        Ok(())
    }
}

fn check_dims(x: &PopulationState, phi: &EvalMatrix) -> Result<()> {
    if x.k() != phi.k() {
        return Err(Error::LengthMismatch {
            expected: phi.k(),
            actual: x.k(),
        });
    }
    Ok(())
}

/// Expected payoff to player `i` for committing to model `j` while every
/// other player draws from its population.
pub fn strategy_fitness(x: &PopulationState, phi: &EvalMatrix, i: usize, j: usize) -> Result<f64> {
    check_dims(x, phi)?;
    let k = x.k();
    if i >= k || j >= k {
        return Err(Error::IndexOutOfRange {
            index: i.max(j),
            len: k,
        });
    }
    if i == j {
        return Err(Error::InvalidProfile(format!(
            "player {i} cannot select itself"
        )));
    }
    Ok(fitness_row(x, phi, i)[j])
}

/// Fitness of every strategy of player `i` (entry `i` is unused and zero).
///
/// The other players' expected votes are shared by every strategy, so each
/// fitness is that common part plus the strategy's own vote. Equal payoff
/// entries therefore give bitwise-equal fitnesses.
fn fitness_row(x: &PopulationState, phi: &EvalMatrix, i: usize) -> Vec<f64> {
    let k = x.k();
    let kf = k as f64;
    let mut others = vec![0.0; k];
    for p in (0..k).filter(|&p| p != i) {
        for (o, v) in others.iter_mut().zip(x.row(p)) {
            *o += v;
        }
    }
    let base: f64 = (0..k).map(|m| others[m] / kf * phi.get(m, i)).sum();
    (0..k)
        .map(|j| {
            if j == i {
                0.0
            } else {
                base + phi.get(j, i) / kf
            }
        })
        .collect()
}

/// `f_j − f̄` for each strategy, written as `Σ_j' x_j' (f_j − f_j')` so that
/// tied fitnesses give an advantage of exactly zero.
fn advantages(row: &[f64], f: &[f64]) -> Vec<f64> {
    f.iter()
        .map(|&fj| row.iter().zip(f).map(|(x, &fo)| x * (fj - fo)).sum())
        .collect()
}

/// Population-weighted mean fitness of player `i`.
pub fn average_fitness(x: &PopulationState, phi: &EvalMatrix, i: usize) -> Result<f64> {
    check_dims(x, phi)?;
    if i >= x.k() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: x.k(),
        });
    }
    let f = fitness_row(x, phi, i);
    Ok(x.row(i).iter().zip(&f).map(|(a, b)| a * b).sum())
}

/// One generation of the replicator update for all populations at once.
pub fn replicator_step(
    x: &PopulationState,
    phi: &EvalMatrix,
    cfg: &DynamicsConfig,
) -> Result<PopulationState> {
    check_dims(x, phi)?;
    let k = x.k();
    let shift = cfg.fitness_shift.resolve(phi);
    let tau = cfg.tau;

    // every fitness is read from generation t before any row is written
    let fitness: Vec<Vec<f64>> = (0..k).map(|i| fitness_row(x, phi, i)).collect();

    let mut next = Vec::with_capacity(k * k);
    for (i, f) in fitness.iter().enumerate() {
        let row = x.row(i);
        // the shift cancels in f_ij − f̄_i, so only the denominator carries it
        let mean: f64 = row.iter().zip(f).map(|(a, b)| a * b).sum();
        let adv = advantages(row, f);
        let denom = mean + shift;
        if !(denom > 0.0) {
            return Err(Error::InsufficientShift { fitness: denom });
        }
        let mut new_row = vec![0.0; k];
        for j in (0..k).filter(|&j| j != i && row[j] > 0.0) {
            if !(f[j] + shift > 0.0) {
                return Err(Error::InsufficientShift {
                    fitness: f[j] + shift,
                });
            }
            let v = match cfg.mode {
                // forward Euler at step tau is the same map as the discrete rule
                DynamicsMode::Discrete | DynamicsMode::Euler => {
                    row[j] * (1.0 + tau * adv[j] / denom)
                }
            };
            if v < 0.0 {
                return Err(Error::StepTooLarge { tau, population: i });
            }
            new_row[j] = v;
        }
        let total: f64 = new_row.iter().sum();
        next.extend(new_row.into_iter().map(|v| v / total));
    }
    Ok(PopulationState { k, x: next })
}

/// True when no strategy's drift `X[i][j]·(f_ij − f̄_i)` exceeds `tol`.
pub fn is_stationary(x: &PopulationState, phi: &EvalMatrix, tol: f64) -> Result<bool> {
    check_dims(x, phi)?;
    Ok(max_drift(x, phi) <= tol)
}

fn max_drift(x: &PopulationState, phi: &EvalMatrix) -> f64 {
    let k = x.k();
    let mut worst = 0.0f64;
    for i in 0..k {
        let f = fitness_row(x, phi, i);
        let row = x.row(i);
        let adv = advantages(row, &f);
        for j in (0..k).filter(|&j| j != i) {
            worst = worst.max((row[j] * adv[j]).abs());
        }
    }
    worst
}

/// Outcome of solving one round's game.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Final state; `None` when there was a single update and no game.
    pub state: Option<PopulationState>,
    pub weights: WeightVector,
    pub generations_run: usize,
    pub stationary: bool,
}

/// Adaptive aggregation weights for a set of received updates.
pub fn solve(models: &[ParamVector], cfg: &DynamicsConfig) -> Result<Solution> {
    match models.len() {
        0 => Err(Error::TooFewModels { needed: 1, got: 0 }),
        1 => Ok(Solution {
            state: None,
            weights: WeightVector::uniform(1),
            generations_run: 0,
            stationary: true,
        }),
        2 => {
            models[0].ensure_compatible(&models[1])?;
            forced_pair()
        }
        _ => solve_matrix(&build_eval_matrix(models)?, cfg),
    }
}

fn forced_pair() -> Result<Solution> {
    Ok(Solution {
        state: Some(PopulationState::uniform(2)?),
        weights: WeightVector::uniform(2),
        generations_run: 0,
        stationary: true,
    })
}

/// Runs the dynamics on an already-built evaluation matrix.
pub fn solve_matrix(phi: &EvalMatrix, cfg: &DynamicsConfig) -> Result<Solution> {
    cfg.validate()?;
    if phi.k() == 2 {
        return forced_pair();
    }
    let mut x = PopulationState::uniform(phi.k())?;
    let mut generations_run = 0;
    let mut stationary = is_stationary(&x, phi, cfg.stationarity_tol)?;
    for _ in 0..cfg.generations {
        if stationary && cfg.early_exit {
            break;
        }
        x = replicator_step(&x, phi, cfg)?;
        generations_run += 1;
        stationary = is_stationary(&x, phi, cfg.stationarity_tol)?;
    }
    debug!(
        "replicator: k={} generations={} stationary={}",
        phi.k(),
        generations_run,
        stationary
    );
    let weights = weights_from_state(&x);
    Ok(Solution {
        state: Some(x),
        weights,
        generations_run,
        stationary,
    })
}
