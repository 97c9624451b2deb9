//! The aggregation game among a round's active users.
//!
//! Each player picks one of the other players' models; the weight a model gets
//! is the (expected) share of players that picked it, and a player's payoff is
//! that weight vector applied to its column of the evaluation matrix.

use std::collections::BTreeMap;

use crate::dynamics::{strategy_fitness, PopulationState};
use crate::error::{Error, Result};
use crate::param_space::{pairwise_distance, ParamVector};

/// Sum-to-one tolerance for weight vectors and population rows.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Absolute tolerance when comparing payoffs for best responses.
pub const PAYOFF_TIE_TOL: f64 = 1e-12;
/// Largest player count accepted by the pure-profile enumerators.
pub const MAX_ENUM_PLAYERS: usize = 8;
/// Population mass at or below this is treated as outside the support.
pub const SUPPORT_FLOOR: f64 = 1e-12;

/// Aggregation weights: non-negative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidWeights("empty".into()));
        }
        if let Some(bad) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "entry {bad} is negative or non-finite"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidWeights(format!("entries sum to {sum}")));
        }
        Ok(Self(w))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// Normalizes non-negative scores to the simplex.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        let total: f64 = scores.iter().sum();
        if !(total > 0.0) || scores.iter().any(|s| *s < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "cannot normalize {scores:?}"
            )));
        }
        Self::new(scores.iter().map(|s| s / total).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Symmetric, zero-diagonal, non-positive payoff estimates between models.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMatrix {
    k: usize,
    phi: Vec<f64>,
}

impl EvalMatrix {
    /// Validates and wraps a `k×k` matrix given as rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::InvalidEvalMatrix(format!("need k >= 2, got {k}")));
        }
        let mut phi = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidEvalMatrix(format!(
                    "row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            phi.extend_from_slice(row);
        }
        let m = Self { k, phi };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.k {
            for j in 0..self.k {
                let v = self.get(i, j);
                if !v.is_finite() {
                    return Err(Error::InvalidEvalMatrix(format!(
                        "entry ({i},{j}) not finite"
                    )));
                }
                if i == j && v != 0.0 {
                    return Err(Error::InvalidEvalMatrix(format!(
                        "diagonal ({i},{i}) = {v}"
                    )));
                }
                if v > 0.0 {
                    return Err(Error::InvalidEvalMatrix(format!(
                        "entry ({i},{j}) = {v} > 0"
                    )));
                }
                if v != self.get(j, i) {
                    return Err(Error::InvalidEvalMatrix(format!(
                        "asymmetric at ({i},{j}): {v} vs {}",
                        self.get(j, i)
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn zeros(k: usize) -> Result<Self> {
        Self::from_rows(vec![vec![0.0; k]; k])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.phi[i * self.k + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.phi.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    /// Largest off-diagonal magnitude.
    pub fn max_abs(&self) -> f64 {
        self.phi.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Relabels players so that new index `n` is old index `perm[n]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k {
            return Err(Error::LengthMismatch {
                expected: self.k,
                actual: perm.len(),
            });
        }
        let rows = (0..self.k)
            .map(|a| (0..self.k).map(|b| self.get(perm[a], perm[b])).collect())
            .collect();
        Self::from_rows(rows)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_rows(
            self.rows()
                .into_iter()
                .map(|r| r.into_iter().map(|v| v * c).collect())
                .collect(),
        )
    }
}

/// `phi[i][j] = -‖θ_i − θ_j‖` off the diagonal, zero on it.
pub fn build_eval_matrix(models: &[ParamVector]) -> Result<EvalMatrix> {
    let k = models.len();
    if k < 2 {
        return Err(Error::TooFewModels { needed: 2, got: k });
    }
    let mut phi = vec![0.0; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = -pairwise_distance(&models[i], &models[j])?;
            phi[i * k + j] = d;
            phi[j * k + i] = d;
        }
    }
    // negating 0.0 gives -0.0, which still compares equal to 0.0
    Ok(EvalMatrix { k, phi })
}

/// One pure strategy per player; `s[i]` is the model index player `i` picks.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StrategyProfile(Vec<usize>);

impl StrategyProfile {
    pub fn new(s: Vec<usize>) -> Result<Self> {
        let k = s.len();
        if k < 2 {
            return Err(Error::InvalidProfile(format!("need k >= 2, got {k}")));
        }
        for (i, &m) in s.iter().enumerate() {
            if m == i {
                return Err(Error::InvalidProfile(format!("player {i} selects itself")));
            }
            if m >= k {
                return Err(Error::InvalidProfile(format!(
                    "player {i} selects {m} >= {k}"
                )));
            }
        }
        Ok(Self(s))
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Same profile with player `i` switched to `strategy`.
    pub fn deviate(&self, i: usize, strategy: usize) -> Result<Self> {
        let mut s = self.0.clone();
        s[i] = strategy;
        Self::new(s)
    }

    /// All legal profiles for `k` players, in lexicographic order.
    pub fn all(k: usize) -> Result<Vec<StrategyProfile>> {
        if k < 2 {
            return Err(Error::InvalidProfile(format!("need k >= 2, got {k}")));
        }
        if k > MAX_ENUM_PLAYERS {
            return Err(Error::GameTooLarge {
                k,
                max: MAX_ENUM_PLAYERS,
            });
        }
        let first_legal = |i: usize| usize::from(i == 0);
        let mut cur: Vec<usize> = (0..k).map(first_legal).collect();
        let mut out = Vec::with_capacity((k - 1).pow(k as u32));
        loop {
            out.push(StrategyProfile(cur.clone()));
            // odometer, last player fastest
            let mut p = k;
            loop {
                if p == 0 {
                    return Ok(out);
                }
                p -= 1;
                let mut next = cur[p] + 1;
                if next == p {
                    next += 1;
                }
                if next < k {
                    cur[p] = next;
                    for (q, c) in cur.iter_mut().enumerate().skip(p + 1) {
                        *c = first_legal(q);
                    }
                    break;
                }
            }
        }
    }
}

/// `w[m] = |{j : s[j] = m}| / k`.
pub fn weights_from_profile(p: &StrategyProfile) -> WeightVector {
    let k = p.k();
    let mut counts = vec![0usize; k];
    for &m in p.as_slice() {
        counts[m] += 1;
    }
    WeightVector(counts.into_iter().map(|c| c as f64 / k as f64).collect())
}

/// Expected vote share of each model under a population state.
pub fn weights_from_state(x: &PopulationState) -> WeightVector {
    let k = x.k();
    let mut w: Vec<f64> = (0..k)
        .map(|m| {
            let votes: f64 = (0..k).filter(|&i| i != m).map(|i| x.get(i, m)).sum();
            votes / k as f64
        })
        .collect();
    for v in &mut w {
        if *v < 1e-15 {
            *v = 0.0;
        }
    }
    let total: f64 = w.iter().sum();
    WeightVector(w.into_iter().map(|v| v / total).collect())
}

/// Player `i`'s payoff: `Σ_r w[r] · phi[r][i]`.
pub fn payoff(w: &WeightVector, phi: &EvalMatrix, i: usize) -> Result<f64> {
    if w.len() != phi.k() {
        return Err(Error::LengthMismatch {
            expected: phi.k(),
            actual: w.len(),
        });
    }
    if i >= phi.k() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: phi.k(),
        });
    }
    Ok(payoff_unchecked(w.as_slice(), phi, i))
}

#[inline]
pub(crate) fn payoff_unchecked(w: &[f64], phi: &EvalMatrix, i: usize) -> f64 {
    w.iter().enumerate().map(|(r, wr)| wr * phi.get(r, i)).sum()
}

fn profile_payoffs(p: &StrategyProfile, phi: &EvalMatrix) -> Vec<f64> {
    let w = weights_from_profile(p);
    (0..phi.k())
        .map(|i| payoff_unchecked(w.as_slice(), phi, i))
        .collect()
}

/// Payoff tuple for every legal pure profile.
pub fn enumerate_payoff_table(phi: &EvalMatrix) -> Result<BTreeMap<StrategyProfile, Vec<f64>>> {
    Ok(StrategyProfile::all(phi.k())?
        .into_iter()
        .map(|p| {
            let u = profile_payoffs(&p, phi);
            (p, u)
        })
        .collect())
}

/// Pure profiles from which no player gains more than [`PAYOFF_TIE_TOL`] by
/// a unilateral switch.
pub fn find_pure_nash(phi: &EvalMatrix) -> Result<Vec<StrategyProfile>> {
    let table = enumerate_payoff_table(phi)?;
    let k = phi.k();
    let mut out = Vec::new();
    'profiles: for (p, u) in &table {
        for i in 0..k {
            for alt in (0..k).filter(|&a| a != i && a != p.as_slice()[i]) {
                let dev = p.deviate(i, alt)?;
                if table[&dev][i] > u[i] + PAYOFF_TIE_TOL {
                    continue 'profiles;
                }
            }
        }
        out.push(p.clone());
    }
    Ok(out)
}

/// Approximate mixed-equilibrium check: every strategy a population still
/// plays (mass above [`SUPPORT_FLOOR`]) must be within `tol` of that
/// player's best pure-strategy fitness.
pub fn verify_msne(x: &PopulationState, phi: &EvalMatrix, tol: f64) -> Result<bool> {
    let k = x.k();
    if k != phi.k() {
        return Err(Error::LengthMismatch {
            expected: phi.k(),
            actual: k,
        });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    for i in 0..k {
        let fitness: Vec<(usize, f64)> = (0..k)
            .filter(|&j| j != i)
            .map(|j| strategy_fitness(x, phi, i, j).map(|f| (j, f)))
            .collect::<Result<_>>()?;
        let best = fitness
            .iter()
            .map(|&(_, f)| f)
            .fold(f64::NEG_INFINITY, f64::max);
        let worst_supported = fitness
            .iter()
            .filter(|&&(j, _)| x.get(i, j) > SUPPORT_FLOOR)
            .map(|&(_, f)| f)
            .fold(f64::INFINITY, f64::min);
        if best - worst_supported > tol {
            return Ok(false);
        }
    }
    Ok(true)
}
