//! Independent reference implementations used by the integration and
//! acceptance tests. Everything here is written from the definitions with
//! plain loops and shares no code with the library beyond its data types.

#![allow(dead_code, clippy::needless_range_loop, clippy::too_many_arguments)]

use gtflat::data::Dataset;
use gtflat::dynamics::PopulationState;
use gtflat::game::EvalMatrix;
use gtflat::model::{batch_loss, model_gradient, Batch};
use gtflat::{Layer, ParamVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn naive_distance(a: &ParamVector, b: &ParamVector) -> f64 {
    let (fa, fb) = (a.flatten(), b.flatten());
    let mut s = 0.0;
    for i in 0..fa.len() {
        s += (fa[i] - fb[i]) * (fa[i] - fb[i]);
    }
    s.sqrt()
}

pub fn naive_average(models: &[ParamVector], w: &[f64]) -> Vec<f64> {
    let n = models[0].total_len();
    let mut out = vec![0.0; n];
    for (m, &wk) in models.iter().zip(w) {
        let f = m.flatten();
        for i in 0..n {
            out[i] += wk * f[i];
        }
    }
    out
}

pub fn naive_phi(models: &[ParamVector]) -> Vec<Vec<f64>> {
    let k = models.len();
    let mut phi = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                phi[i][j] = -naive_distance(&models[i], &models[j]);
            }
        }
    }
    phi
}

/// Payoff of player `i` under a pure profile, straight from the vote counts.
pub fn naive_profile_payoff(profile: &[usize], phi: &[Vec<f64>], i: usize) -> f64 {
    let k = profile.len();
    let mut u = 0.0;
    for &choice in profile {
        u += phi[choice][i] / k as f64;
    }
    u
}

/// Expected payoff of player `i` committing to `j` while every other player
/// draws from its population row, by summing over all opponent profiles.
pub fn expected_payoff_enum(x: &[Vec<f64>], phi: &[Vec<f64>], i: usize, j: usize) -> f64 {
    let k = x.len();
    let mut profile = vec![0usize; k];
    let mut total = 0.0;
    fn rec(
        p: usize,
        prob: f64,
        profile: &mut Vec<usize>,
        x: &[Vec<f64>],
        phi: &[Vec<f64>],
        i: usize,
        j: usize,
        total: &mut f64,
    ) {
        let k = x.len();
        if p == k {
            *total += prob * naive_profile_payoff(profile, phi, i);
            return;
        }
        if p == i {
            profile[p] = j;
            rec(p + 1, prob, profile, x, phi, i, j, total);
            return;
        }
        for s in 0..k {
            if x[p][s] > 0.0 {
                profile[p] = s;
                rec(p + 1, prob * x[p][s], profile, x, phi, i, j, total);
            }
        }
    }
    rec(0, 1.0, &mut profile, x, phi, i, j, &mut total);
    total
}

pub fn expected_average_payoff_enum(x: &[Vec<f64>], phi: &[Vec<f64>], i: usize) -> f64 {
    (0..x.len())
        .filter(|&j| j != i)
        .map(|j| x[i][j] * expected_payoff_enum(x, phi, i, j))
        .sum()
}

/// Random model with a two-layer shape of `n` scalars in total.
pub fn random_model<R: Rng>(rng: &mut R, n: usize, scale: f64) -> ParamVector {
    let split = n / 2;
    let mut draw = |m: usize| -> Vec<f64> {
        (0..m)
            .map(|_| scale * rng.random_range(-1.0..1.0))
            .collect()
    };
    ParamVector::new(vec![
        Layer::new(vec![split], draw(split)).unwrap(),
        Layer::new(vec![n - split], draw(n - split)).unwrap(),
    ])
}

pub fn random_phi<R: Rng>(rng: &mut R, k: usize) -> EvalMatrix {
    let models: Vec<ParamVector> = (0..k).map(|_| random_model(rng, 6, 1.0)).collect();
    EvalMatrix::from_rows(naive_phi(&models)).unwrap()
}

/// Valid population state; some off-diagonal entries are zeroed out when
/// `sparse` is set, but every row keeps at least one strategy.
pub fn random_state<R: Rng>(rng: &mut R, k: usize, sparse: bool) -> PopulationState {
    let mut rows = vec![vec![0.0; k]; k];
    for (i, row) in rows.iter_mut().enumerate() {
        let keep = (i + 1 + rng.random_range(0..k - 1)) % k;
        for (j, v) in row.iter_mut().enumerate() {
            if j == i {
                continue;
            }
            if j == keep || !sparse || rng.random_bool(0.6) {
                *v = rng.random_range(0.05..1.0);
            }
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    PopulationState::from_rows(rows).unwrap()
}

/// Dataset with Gaussian features and uniform labels.
pub fn random_dataset<R: Rng>(rng: &mut R, n: usize, dim: usize, classes: usize) -> Dataset {
    let features = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
    let labels = (0..n).map(|i| i % classes).collect();
    Dataset::new(features, labels, dim, classes).unwrap()
}

/// Largest relative disagreement between the analytic gradient and central
/// differences with step `h`. The relative error is taken against
/// `max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(params: &ParamVector, data: &Dataset, h: f64, floor: f64) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let batch = Batch::new(data, &idx);
    let g = model_gradient(params, &batch).unwrap().flatten();
    let theta = params.flatten();
    let mut worst = 0.0f64;
    for c in 0..theta.len() {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[c] += h;
        minus[c] -= h;
        let lp = batch_loss(&params.with_flat_values(&plus).unwrap(), &batch).unwrap();
        let lm = batch_loss(&params.with_flat_values(&minus).unwrap(), &batch).unwrap();
        let num = (lp - lm) / (2.0 * h);
        let rel = (num - g[c]).abs() / g[c].abs().max(num.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}

/// Per-example top-1 accuracy of a softmax-regression parameter vector.
pub fn naive_softmax_accuracy(params: &ParamVector, data: &Dataset) -> f64 {
    let w = params.layers()[0].values();
    let b = params.layers()[1].values();
    let (d, c) = (data.dim(), data.classes());
    let mut correct = 0;
    for n in 0..data.len() {
        let x = data.row(n);
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for class in 0..c {
            let mut s = b[class];
            for a in 0..d {
                s += w[class * d + a] * x[a];
            }
            if s > best_score {
                best_score = s;
                best = class;
            }
        }
        if best == data.labels()[n] {
            correct += 1;
        }
    }
    correct as f64 / data.len() as f64
}
