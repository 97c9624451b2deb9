//! Client model: multinomial logistic regression, or a one-hidden-layer tanh
//! network. Parameters live in a [`ParamVector`]:
//!
//! - softmax: `[W (C×d), b (C)]`
//! - mlp: `[W1 (h×d), b1 (h), W2 (C×h), b2 (C)]`

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::param_space::{Layer, ParamVector};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", deny_unknown_fields)]
pub enum Architecture {
    #[default]
    Softmax,
    Mlp {
        hidden: usize,
    },
}

impl Architecture {
    pub fn init<R: Rng + ?Sized>(
        &self,
        dim: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<ParamVector> {
        let mut gaussian = |rows: usize, cols: usize, std: f64| -> Result<Layer> {
            let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            Layer::new(
                vec![rows, cols],
                (0..rows * cols).map(|_| normal.sample(rng)).collect(),
            )
        };
        Ok(match *self {
            Architecture::Softmax => ParamVector::new(vec![
                gaussian(classes, dim, 0.01)?,
                Layer::zeros(vec![classes]),
            ]),
            Architecture::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::InvalidConfig("hidden width must be >= 1".into()));
                }
                ParamVector::new(vec![
                    gaussian(hidden, dim, (1.0 / dim as f64).sqrt())?,
                    Layer::zeros(vec![hidden]),
                    gaussian(classes, hidden, (1.0 / hidden as f64).sqrt())?,
                    Layer::zeros(vec![classes]),
                ])
            }
        })
    }
}

/// Rows of a dataset fed through the model together.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub data: &'a Dataset,
    pub indices: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(data: &'a Dataset, indices: &'a [usize]) -> Self {
        Self { data, indices }
    }
}

enum View<'p> {
    Softmax {
        w: &'p Layer,
        b: &'p Layer,
    },
    Mlp {
        w1: &'p Layer,
        b1: &'p Layer,
        w2: &'p Layer,
        b2: &'p Layer,
    },
}

fn view(params: &ParamVector, dim: usize, classes: usize) -> Result<View<'_>> {
    let bad = || {
        Error::ShapeMismatch(format!(
            "parameters {:?} do not fit dim {dim}, {classes} classes",
            params.shape_signature()
        ))
    };
    match params.layers() {
        [w, b] => {
            if w.shape() != [classes, dim] || b.shape() != [classes] {
                return Err(bad());
            }
            Ok(View::Softmax { w, b })
        }
        [w1, b1, w2, b2] => {
            let h = b1.shape().first().copied().ok_or_else(bad)?;
            if w1.shape() != [h, dim]
                || b1.shape() != [h]
                || w2.shape() != [classes, h]
                || b2.shape() != [classes]
            {
                return Err(bad());
            }
            Ok(View::Mlp { w1, b1, w2, b2 })
        }
        _ => Err(bad()),
    }
}

fn affine(w: &Layer, b: &Layer, x: &[f64], out: &mut Vec<f64>) {
    let cols = x.len();
    out.clear();
    out.extend(
        w.values()
            .chunks(cols)
            .zip(b.values())
            .map(|(row, bias)| bias + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()),
    );
}

/// Numerically stable softmax, in place.
fn softmax(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// Class scores for one example.
pub fn logits(params: &ParamVector, x: &[f64], classes: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(classes);
    match view(params, x.len(), classes)? {
        View::Softmax { w, b } => affine(w, b, x, &mut out),
        View::Mlp { w1, b1, w2, b2 } => {
            let mut h = Vec::new();
            affine(w1, b1, x, &mut h);
            h.iter_mut().for_each(|v| *v = v.tanh());
            affine(w2, b2, &h, &mut out);
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the batch.
pub fn batch_loss(params: &ParamVector, batch: &Batch<'_>) -> Result<f64> {
    if batch.indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ds = batch.data;
    let mut total = 0.0;
    for &n in batch.indices {
        let z = logits(params, ds.row(n), ds.classes())?;
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[ds.labels()[n]];
    }
    Ok(total / batch.indices.len() as f64)
}

/// Gradient of [`batch_loss`] with respect to every parameter.
pub fn model_gradient(params: &ParamVector, batch: &Batch<'_>) -> Result<ParamVector> {
    if batch.indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ds = batch.data;
    let (dim, classes) = (ds.dim(), ds.classes());
    let scale = 1.0 / batch.indices.len() as f64;
    let mut grad = params.zeros_like();

    match view(params, dim, classes)? {
        View::Softmax { w, b } => {
            let mut p = Vec::with_capacity(classes);
            for &n in batch.indices {
                let x = ds.row(n);
                affine(w, b, x, &mut p);
                softmax(&mut p);
                p[ds.labels()[n]] -= 1.0;
                let layers = grad.layers_mut();
                for (c, &delta) in p.iter().enumerate() {
                    let d = delta * scale;
                    for (g, xv) in layers[0].values_mut()[c * dim..(c + 1) * dim]
                        .iter_mut()
                        .zip(x)
                    {
                        *g += d * xv;
                    }
                    layers[1].values_mut()[c] += d;
                }
            }
        }
        View::Mlp { w1, b1, w2, b2 } => {
            let hidden = b1.values().len();
            let (mut h, mut p) = (Vec::with_capacity(hidden), Vec::with_capacity(classes));
            let mut dh = vec![0.0; hidden];
            for &n in batch.indices {
                let x = ds.row(n);
                affine(w1, b1, x, &mut h);
                h.iter_mut().for_each(|v| *v = v.tanh());
                affine(w2, b2, &h, &mut p);
                softmax(&mut p);
                p[ds.labels()[n]] -= 1.0;

                dh.iter_mut().for_each(|v| *v = 0.0);
                let layers = grad.layers_mut();
                for (c, &delta) in p.iter().enumerate() {
                    let d = delta * scale;
                    let w2_row = &w2.values()[c * hidden..(c + 1) * hidden];
                    let g_row = &mut layers[2].values_mut()[c * hidden..(c + 1) * hidden];
                    for ((g, hv), (dv, wv)) in
                        g_row.iter_mut().zip(&h).zip(dh.iter_mut().zip(w2_row))
                    {
                        *g += d * hv;
                        *dv += d * wv;
                    }
                    layers[3].values_mut()[c] += d;
                }
                for (u, (&dv, &hv)) in dh.iter().zip(&h).enumerate() {
                    let pre = dv * (1.0 - hv * hv);
                    for (g, xv) in layers[0].values_mut()[u * dim..(u + 1) * dim]
                        .iter_mut()
                        .zip(x)
                    {
                        *g += pre * xv;
                    }
                    layers[1].values_mut()[u] += pre;
                }
            }
        }
    }
    Ok(grad)
}

/// Index of the highest score; ties go to the lowest class.
pub fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold(0, |best, (c, &v)| if v > scores[best] { c } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(vec![0.0, 0.0, 0.0, 0.0], vec![0, 2], 2, 3).unwrap()
    }

    #[test]
    fn gradient_at_origin_is_softmax_minus_onehot() {
        let ds = tiny();
        let params = Architecture::Softmax
            .init(2, 3, &mut rand::rng())
            .unwrap()
            .zeros_like();
        let g = model_gradient(&params, &Batch::new(&ds, &[0, 1])).unwrap();
        let third = 1.0 / 3.0;
        let expect = [third - 0.5, third, third - 0.5];
        for (a, e) in g.layers()[1].values().iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
        assert!(g.layers()[0].values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let ds = Dataset::new(vec![0.5, -1.0, 2.0, 0.3], vec![1, 0], 2, 2).unwrap();
        let mut rng = rand::rng();
        for arch in [Architecture::Softmax, Architecture::Mlp { hidden: 3 }] {
            let params = arch.init(2, 2, &mut rng).unwrap();
            let g1 = model_gradient(&params, &Batch::new(&ds, &[0, 1])).unwrap();
            let g2 = model_gradient(&params, &Batch::new(&ds, &[0, 1, 0, 1])).unwrap();
            for (a, b) in g1.scalars().zip(g2.scalars()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let ds = tiny();
        let params = Architecture::Softmax.init(3, 3, &mut rand::rng()).unwrap();
        assert!(matches!(
            model_gradient(&params, &Batch::new(&ds, &[0])),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(model_gradient(&ParamVector::default(), &Batch::new(&ds, &[0])).is_err());
        assert!(matches!(
            model_gradient(&params, &Batch::new(&ds, &[])),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
