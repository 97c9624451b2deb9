//! Evaluation quantities: accuracy, running maxima, effective rounds and the
//! effective-round improvement ratio. Rounds are 1-indexed throughout.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{argmax, logits};
use crate::param_space::ParamVector;

/// Per-round accuracies in `[0, 1]`; `get(1)` is the first round.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracySeries(Vec<f64>);

impl AccuracySeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("accuracy series is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!("accuracy {v} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Accuracy at 1-based `round`.
    pub fn get(&self, round: usize) -> Option<f64> {
        round.checked_sub(1).and_then(|r| self.0.get(r)).copied()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn last(&self) -> f64 {
        *self.0.last().expect("series is non-empty")
    }
}

/// Fraction of examples whose top-scoring class is the label.
pub fn top1_accuracy(params: &ParamVector, ds: &Dataset) -> Result<f64> {
    let mut hits = 0usize;
    for n in 0..ds.len() {
        if argmax(&logits(params, ds.row(n), ds.classes())?) == ds.labels()[n] {
            hits += 1;
        }
    }
    Ok(hits as f64 / ds.len() as f64)
}

pub fn cumulative_max(s: &AccuracySeries) -> AccuracySeries {
    let mut best = f64::NEG_INFINITY;
    AccuracySeries(
        s.0.iter()
            .map(|&v| {
                best = best.max(v);
                best
            })
            .collect(),
    )
}

/// First round whose accuracy reaches `target − eps`.
pub fn effective_round(s: &AccuracySeries, target: f64, eps: f64) -> Option<usize> {
    s.0.iter().position(|&v| v >= target - eps).map(|r| r + 1)
}

/// Percentage by which `F` needs fewer rounds than `F′` to reach the accuracy
/// `F′` has at `round`. `None` when either never gets there or `round` is out
/// of range.
pub fn erir(
    s_f: &AccuracySeries,
    s_f_prime: &AccuracySeries,
    round: usize,
    eps: f64,
) -> Option<f64> {
    let target = s_f_prime.get(round)?;
    let r_f = effective_round(s_f, target, eps)?;
    let r_fp = effective_round(s_f_prime, target, eps)?;
    Some(erir_from_rounds(r_f, r_fp))
}

/// `(1 − r_f / r_f_prime) · 100`.
pub fn erir_from_rounds(r_f: usize, r_f_prime: usize) -> f64 {
    (1.0 - r_f as f64 / r_f_prime as f64) * 100.0
}
