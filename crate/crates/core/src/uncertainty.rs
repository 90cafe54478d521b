//! Per-input uncertainty scores. Every metric follows the convention
//! "higher = more uncertain" so selectors can always sort descending.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embstore::{EmbeddingMatrix, LabelVector, ProbabilityMatrix};
use crate::error::{Error, Result};

/// DATIS score used when the predicted class has no neighbor support.
pub const DATIS_SATURATION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyMetric {
    Margin,
    Datis,
}

impl fmt::Display for UncertaintyMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UncertaintyMetric::Margin => f.write_str("margin"),
            UncertaintyMetric::Datis => f.write_str("datis"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyVector {
    scores: Vec<f64>,
    metric: UncertaintyMetric,
}

impl UncertaintyVector {
    pub fn new(scores: Vec<f64>, metric: UncertaintyMetric) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidData(format!("uncertainty score {i} is not finite")));
        }
        Ok(Self { scores, metric })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn metric(&self) -> UncertaintyMetric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Scores as an `n x 1` matrix for export.
    pub fn to_matrix(&self) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::from_f64(self.scores.len(), 1, &self.scores)
    }
}

/// `1 − (p_max − p_second)` per row.
pub fn margin_uncertainty(probs: &ProbabilityMatrix) -> Result<UncertaintyVector> {
    if probs.classes() < 2 {
        return Err(Error::InsufficientClasses(probs.classes()));
    }
    let scores = probs
        .iter_rows()
        .map(|row| {
            let (mut first, mut second) = (f32::NEG_INFINITY, f32::NEG_INFINITY);
            for &p in row {
                if p > first {
                    second = first;
                    first = p;
                } else if p > second {
                    second = p;
                }
            }
            (1.0 - (first as f64 - second as f64)).clamp(0.0, 1.0)
        })
        .collect();
    UncertaintyVector::new(scores, UncertaintyMetric::Margin)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatisConfig {
    k: usize,
    tau: f64,
}

impl DatisConfig {
    pub fn new(k: usize, tau: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("DATIS k must be at least 1".into()));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("DATIS tau must be positive, got {tau}")));
        }
        Ok(Self { k, tau })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

impl Default for DatisConfig {
    fn default() -> Self {
        Self { k: 10, tau: 1.0 }
    }
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn check_training(z_dim: usize, train_z: &EmbeddingMatrix, train_labels: &LabelVector, cfg: &DatisConfig) -> Result<()> {
    if train_z.rows() != train_labels.len() {
        return Err(Error::Shape(format!(
            "{} training embeddings but {} training labels",
            train_z.rows(),
            train_labels.len()
        )));
    }
    if z_dim != train_z.cols() {
        return Err(Error::Shape(format!(
            "input dimension {z_dim} differs from training dimension {}",
            train_z.cols()
        )));
    }
    if train_z.rows() < cfg.k {
        return Err(Error::Config(format!(
            "DATIS needs at least k = {} training rows, got {}",
            cfg.k,
            train_z.rows()
        )));
    }
    Ok(())
}

/// Neighbor-weighted class support `p*` for one input, over
/// `train_labels.classes()` classes.
pub fn datis_support(
    z: &[f32],
    train_z: &EmbeddingMatrix,
    train_labels: &LabelVector,
    cfg: &DatisConfig,
) -> Result<Vec<f64>> {
    check_training(z.len(), train_z, train_labels, cfg)?;
    Ok(support_unchecked(z, train_z, train_labels, cfg))
}

fn support_unchecked(z: &[f32], train_z: &EmbeddingMatrix, train_labels: &LabelVector, cfg: &DatisConfig) -> Vec<f64> {
    let mut dist: Vec<(f64, usize)> = train_z
        .iter_rows()
        .enumerate()
        .map(|(t, row)| (squared_distance(z, row), t))
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if cfg.k < dist.len() {
        dist.select_nth_unstable_by(cfg.k - 1, order);
        dist.truncate(cfg.k);
    }
    // Shifting by the nearest distance leaves the normalized weights unchanged
    // and keeps exp() away from underflow.
    let nearest = dist.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
    let mut support = vec![0.0; train_labels.classes()];
    let mut total = 0.0;
    for &(d, t) in &dist {
        let w = (-(d - nearest) / cfg.tau).exp();
        support[train_labels.get(t)] += w;
        total += w;
    }
    support.iter_mut().for_each(|s| *s /= total);
    support
}

/// `p*_n / p*_m`, with `m` the predicted class and `n` the best-supported
/// other class. Saturates at [`DATIS_SATURATION`] when `p*_m = 0`.
pub fn datis_uncertainty(
    z: &EmbeddingMatrix,
    predicted: &LabelVector,
    train_z: &EmbeddingMatrix,
    train_labels: &LabelVector,
    cfg: &DatisConfig,
) -> Result<UncertaintyVector> {
    let classes = train_labels.classes();
    if classes < 2 {
        return Err(Error::InsufficientClasses(classes));
    }
    if predicted.len() != z.rows() {
        return Err(Error::Shape(format!(
            "{} inputs but {} predicted labels",
            z.rows(),
            predicted.len()
        )));
    }
    if let Some(i) = (0..predicted.len()).find(|&i| predicted.get(i) >= classes) {
        return Err(Error::InvalidData(format!(
            "predicted label {} of input {i} is not below class count {classes}",
            predicted.get(i)
        )));
    }
    check_training(z.cols(), train_z, train_labels, cfg)?;
    let scores = (0..z.rows())
        .into_par_iter()
        .map(|i| {
            let support = support_unchecked(z.row(i), train_z, train_labels, cfg);
            datis_ratio(&support, predicted.get(i))
        })
        .collect();
    UncertaintyVector::new(scores, UncertaintyMetric::Datis)
}

fn datis_ratio(support: &[f64], predicted: usize) -> f64 {
    let pm = support[predicted];
    let pn = support
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != predicted)
        .map(|(_, &p)| p)
        .fold(0.0, f64::max);
    if pm == 0.0 {
        DATIS_SATURATION
    } else {
        pn / pm
    }
}
