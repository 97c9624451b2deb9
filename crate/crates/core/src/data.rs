//! Datasets and heterogeneous client partitions.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Row-major `n×d` features with class labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} features for {} examples of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} >= class count {classes}"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.features[n * self.dim..(n + 1) * self.dim]
    }

    /// Copies the given examples, in order, into a new dataset.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        for &n in idx {
            features.extend_from_slice(self.row(n));
            labels.push(self.labels[n]);
        }
        Dataset::new(features, labels, self.dim, self.classes)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

/// Isotropic unit-variance Gaussian blobs, one per class.
///
/// Class `c` is centred on axis `c mod d` at distance `separation`. When there
/// are more classes than axes, later classes flip sign and then move further
/// out so that no two centres coincide.
pub fn make_synthetic<R: Rng + ?Sized>(
    classes: usize,
    dim: usize,
    n_per_class: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if classes < 2 || dim < 1 || n_per_class < 1 {
        return Err(Error::InvalidConfig(format!(
            "synthetic data needs classes >= 2, dim >= 1, n_per_class >= 1 (got {classes}, {dim}, {n_per_class})"
        )));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "separation must be >= 0, got {separation}"
        )));
    }
    let mut features = Vec::with_capacity(classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for c in 0..classes {
        let axis = c % dim;
        let sign = if (c / dim).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        let scale = 1.0 + (c / (2 * dim)) as f64;
        for _ in 0..n_per_class {
            for a in 0..dim {
                let z: f64 = StandardNormal.sample(rng);
                let mean = if a == axis {
                    sign * scale * separation
                } else {
                    0.0
                };
                features.push(mean + z);
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, dim, classes)
}

/// One draw from `Dirichlet(alpha)`.
///
/// Gamma variates are drawn in log space: shapes below one use
/// `G(a) = G(a + 1) · U^(1/a)`, so tiny concentrations do not underflow to an
/// all-zero vector.
pub fn dirichlet_sample<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::InvalidConfig("empty concentration vector".into()));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "concentration {a} must be > 0"
        )));
    }
    let log_g: Vec<f64> = alpha
        .iter()
        .map(|&a| log_gamma_variate(a, rng))
        .collect::<Result<_>>()?;
    let max = log_g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = log_g.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / total).collect())
}

fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    let gamma = |s: f64| Gamma::new(s, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()));
    if shape >= 1.0 {
        Ok(gamma(shape)?.sample(rng).ln())
    } else {
        let g = gamma(shape + 1.0)?.sample(rng);
        // 1 - u lies in (0, 1]
        let u: f64 = 1.0 - rng.random::<f64>();
        Ok(g.ln() + u.ln() / shape)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub clients: usize,
    pub alpha: f64,
    #[serde(default = "default_min_per_client")]
    pub min_per_client: usize,
}

fn default_min_per_client() -> usize {
    1
}

impl PartitionSpec {
    pub fn new(clients: usize, alpha: f64) -> Self {
        Self {
            clients,
            alpha,
            min_per_client: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients < 1 {
            return Err(Error::InvalidConfig(
                "partition needs at least one client".into(),
            ));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Splits `count` items by `proportions` with largest-remainder rounding.
/// Ties in the remainder go to the lower index.
fn largest_remainder(count: usize, proportions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * count as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    if assigned <= count {
        for &c in order.iter().take(count - assigned) {
            alloc[c] += 1;
        }
    } else {
        // proportions summing a hair above one can overshoot by rounding
        let mut excess = assigned - count;
        for &c in order.iter().rev() {
            if excess == 0 {
                break;
            }
            if alloc[c] > 0 {
                alloc[c] -= 1;
                excess -= 1;
            }
        }
    }
    alloc
}

/// Per-class Dirichlet split of example indices over `spec.clients` clients.
pub fn dirichlet_partition<R: Rng + ?Sized>(
    ds: &Dataset,
    spec: &PartitionSpec,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let m = spec.clients;
    let n = ds.len();
    if n < m * spec.min_per_client {
        return Err(Error::InfeasiblePartition(format!(
            "{n} examples cannot give {m} clients {} each",
            spec.min_per_client
        )));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes()];
    for (idx, &y) in ds.labels().iter().enumerate() {
        by_class[y].push(idx);
    }

    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); m];
    let alpha = vec![spec.alpha; m];
    for members in by_class.iter().filter(|c| !c.is_empty()) {
        let p = dirichlet_sample(&alpha, rng)?;
        let counts = largest_remainder(members.len(), &p);
        let mut offset = 0;
        for (part, cnt) in parts.iter_mut().zip(counts) {
            part.extend_from_slice(&members[offset..offset + cnt]);
            offset += cnt;
        }
    }

    // top up starved clients from the currently largest one
    while let Some(short) = (0..m).find(|&c| parts[c].len() < spec.min_per_client) {
        let donor = (0..m)
            .max_by(|&a, &b| parts[a].len().cmp(&parts[b].len()).then(b.cmp(&a)))
            .expect("m >= 1");
        if parts[donor].len() <= spec.min_per_client {
            return Err(Error::InfeasiblePartition("no client can donate".into()));
        }
        let moved = parts[donor].pop().expect("donor is non-empty");
        parts[short].push(moved);
    }

    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

const IDX_LABELS: u32 = 0x0000_0801;
const IDX_IMAGES: u32 = 0x0000_0803;

fn read_be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx(format!("truncated {what} header")))
}

/// Parses an IDX image file (`0x00000803`) into `(count, rows·cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let magic = read_be_u32(bytes, 0, "image")?;
    if magic != IDX_IMAGES {
        return Err(Error::Idx(format!("bad image magic {magic:#010x}")));
    }
    let count = read_be_u32(bytes, 4, "image")? as usize;
    let rows = read_be_u32(bytes, 8, "image")? as usize;
    let cols = read_be_u32(bytes, 12, "image")? as usize;
    let d = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * d {
        return Err(Error::Idx(format!(
            "truncated image data: need {} bytes, have {}",
            count * d,
            body.len()
        )));
    }
    Ok((count, d, body[..count * d].to_vec()))
}

/// Parses an IDX label file (`0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_be_u32(bytes, 0, "label")?;
    if magic != IDX_LABELS {
        return Err(Error::Idx(format!("bad label magic {magic:#010x}")));
    }
    let count = read_be_u32(bytes, 4, "label")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Idx(format!(
            "truncated label data: need {count} bytes, have {}",
            body.len()
        )));
    }
    Ok(body[..count].to_vec())
}

/// Builds a dataset from in-memory IDX image and label files. Pixels are
/// scaled to `[0, 1]`; the class count is `max(label) + 1`.
pub fn dataset_from_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (count, d, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != count {
        return Err(Error::Idx(format!(
            "count mismatch: {count} images, {} labels",
            labels.len()
        )));
    }
    let classes = labels
        .iter()
        .copied()
        .max()
        .map_or(0, |m| m as usize + 1)
        .max(2);
    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Dataset::new(
        features,
        labels.into_iter().map(usize::from).collect(),
        d,
        classes,
    )
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    dataset_from_idx(&images, &labels)
}

/// Encodes `(count, rows, cols, pixels)` as an IDX image file.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len().checked_div(rows * cols).unwrap_or(0);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Mean per-client label histograms' total-variation distance to the global
/// label distribution.
pub fn mean_label_tv(ds: &Dataset, parts: &[Vec<usize>]) -> f64 {
    let global = normalized(&ds.label_histogram());
    let tv: f64 = parts
        .iter()
        .map(|p| {
            let mut h = vec![0usize; ds.classes()];
            for &n in p {
                h[ds.labels()[n]] += 1;
            }
            total_variation(&normalized(&h), &global)
        })
        .sum();
    tv / parts.len() as f64
}

pub fn normalized(h: &[usize]) -> Vec<f64> {
    let total: usize = h.iter().sum();
    h.iter()
        .map(|&c| {
            if total == 0 {
                0.0
            } else {
                c as f64 / total as f64
            }
        })
        .collect()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}
