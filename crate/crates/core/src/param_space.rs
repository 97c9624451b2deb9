//! Model parameters as ordered lists of shaped arrays, plus the distance and
//! averaging primitives used by the aggregators.

use crate::error::{Error, Result};
use crate::game::WeightVector;

/// One shaped array of scalars, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Layer {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "layer shape {shape:?} holds {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer values"));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Trainable parameters of one model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector {
    layers: Vec<Layer>,
}

impl ParamVector {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Single-layer vector of shape `(values.len(),)`.
    pub fn from_flat(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Ok(Self::new(vec![Layer::new(vec![n], values)?]))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn total_len(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }

    pub fn is_shape_compatible(&self, other: &ParamVector) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.shape == b.shape)
    }

    pub fn ensure_compatible(&self, other: &ParamVector) -> Result<()> {
        if self.is_shape_compatible(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape_signature(),
                other.shape_signature()
            )))
        }
    }

    pub fn shape_signature(&self) -> Vec<Vec<usize>> {
        self.layers.iter().map(|l| l.shape.clone()).collect()
    }

    /// All scalars in layer order, each layer row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for layer in &self.layers {
            out.extend_from_slice(&layer.values);
        }
        out
    }

    /// Iterates scalars in `flatten` order without allocating.
    pub fn scalars(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.values.iter().copied())
    }

    /// Rebuilds a vector with this shape signature from a flat array.
    pub fn with_flat_values(&self, flat: &[f64]) -> Result<ParamVector> {
        if flat.len() != self.total_len() {
            return Err(Error::LengthMismatch {
                expected: self.total_len(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let n = layer.values.len();
            layers.push(Layer::new(
                layer.shape.clone(),
                flat[offset..offset + n].to_vec(),
            )?);
            offset += n;
        }
        Ok(ParamVector::new(layers))
    }

    pub fn zeros_like(&self) -> ParamVector {
        ParamVector::new(
            self.layers
                .iter()
                .map(|l| Layer::zeros(l.shape.clone()))
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.scalars().all(f64::is_finite)
    }

    /// `self += a · x`. Caller guarantees shape compatibility.
    pub(crate) fn axpy(&mut self, a: f64, x: &ParamVector) {
        debug_assert!(self.is_shape_compatible(x));
        for (dst, src) in self.layers.iter_mut().zip(&x.layers) {
            for (d, s) in dst.values.iter_mut().zip(&src.values) {
                *d += a * s;
            }
        }
    }
}

/// Euclidean norm of the flattened difference. Equal to the Frobenius norm of
/// the per-layer differences taken over all layers jointly.
pub fn pairwise_distance(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    a.ensure_compatible(b)?;
    Ok(squared_distance_unchecked(a, b).sqrt())
}

pub(crate) fn squared_distance_unchecked(a: &ParamVector, b: &ParamVector) -> f64 {
    a.scalars()
        .zip(b.scalars())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// `Σ_k w_k · models[k]`.
///
/// Accumulated as `anchor + Σ_k w_k · (models[k] − anchor)` in model index
/// order, where the anchor is the first model holding the largest weight. With
/// `Σ w = 1` this is the same sum, but one-hot weights and identical models
/// reproduce the input bit for bit.
pub fn weighted_average(models: &[ParamVector], w: &WeightVector) -> Result<ParamVector> {
    let first = models
        .first()
        .ok_or(Error::TooFewModels { needed: 1, got: 0 })?;
    if w.len() != models.len() {
        return Err(Error::LengthMismatch {
            expected: models.len(),
            actual: w.len(),
        });
    }
    for m in &models[1..] {
        first.ensure_compatible(m)?;
    }

    let anchor_idx =
        w.as_slice().iter().enumerate().fold(
            0,
            |best, (k, &wk)| if wk > w.as_slice()[best] { k } else { best },
        );
    let anchor = &models[anchor_idx];

    let mut out = anchor.clone();
    for (k, (model, &wk)) in models.iter().zip(w.as_slice()).enumerate() {
        if k == anchor_idx || wk == 0.0 {
            continue;
        }
        for ((dst, src), base) in out.layers.iter_mut().zip(&model.layers).zip(&anchor.layers) {
            for ((d, s), a) in dst.values.iter_mut().zip(&src.values).zip(&base.values) {
                *d += wk * (s - a);
            }
        }
    }
    Ok(out)
}
