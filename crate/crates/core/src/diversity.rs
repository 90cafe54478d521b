//! Concept-Based Diversity (CBD) and the Geometric Diversity (GD) baseline.
//!
//! CBD is the base-2 Shannon entropy of the pooled concept frequencies of a
//! subset. [`ConceptHistogram`] keeps it up to date in O(m) per image using
//!
//! ```text
//! H = log2 T − (1/T) Σ fq·log2 fq
//! ```
//!
//! where `T = Σ fq`. The `Σ fq·log2 fq` term is held in fixed point so that
//! adding and then removing an image restores the histogram bit for bit.
//!
//! GD is `logdet(V̂V̂ᵀ + εI)` over the row-normalized feature matrix `V̂`.

use std::sync::OnceLock;

use faer::{Mat, Side};

use crate::concept_space::ConceptAssignment;
use crate::embstore::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_GD_EPSILON: f64 = 1e-8;

/// Pooled concept entropy in bits, computed directly as `−Σ p log2 p`.
pub fn cbd_score<'a, I>(assignments: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a ConceptAssignment>,
{
    let mut pooled: Vec<usize> = Vec::new();
    let mut images = 0usize;
    for a in assignments {
        if a.is_empty() {
            return Err(Error::UndefinedDiversity(format!("image {} has no concepts", a.image())));
        }
        images += 1;
        pooled.extend(a.indices());
    }
    if images == 0 {
        return Err(Error::UndefinedDiversity("empty subset".into()));
    }
    pooled.sort_unstable();
    let freqs = pooled.chunk_by(|a, b| a == b).map(|run| run.len() as u64);
    Ok(entropy_bits(freqs))
}

/// Shannon entropy (bits) of a frequency list.
pub fn entropy_bits(freqs: impl Iterator<Item = u64> + Clone) -> f64 {
    let total: u64 = freqs.clone().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = freqs
        .filter(|&f| f > 0)
        .map(|f| {
            let p = f as f64 / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Fixed-point scale for `fq·log2 fq` terms.
const FLOG_SCALE: f64 = (1u64 << 40) as f64;
const FLOG_TABLE_LEN: usize = 1 << 16;

fn flog_fixed(f: u64) -> i128 {
    if (f as usize) < FLOG_TABLE_LEN {
        static TABLE: OnceLock<Vec<i128>> = OnceLock::new();
        TABLE.get_or_init(|| (0..FLOG_TABLE_LEN as u64).map(flog_fixed_uncached).collect())[f as usize]
    } else {
        flog_fixed_uncached(f)
    }
}

fn flog_fixed_uncached(f: u64) -> i128 {
    if f <= 1 {
        return 0;
    }
    let f = f as f64;
    (f * f.log2() * FLOG_SCALE).round() as i128
}

/// Concept frequencies with an incrementally maintained entropy.
#[derive(Debug, Clone, Default)]
pub struct ConceptHistogram {
    counts: Vec<u32>,
    total: u64,
    distinct: usize,
    flog_sum: i128,
}

impl PartialEq for ConceptHistogram {
    fn eq(&self, other: &Self) -> bool {
        let (short, long) = if self.counts.len() <= other.counts.len() {
            (&self.counts, &other.counts)
        } else {
            (&other.counts, &self.counts)
        };
        self.total == other.total
            && self.distinct == other.distinct
            && self.flog_sum == other.flog_sum
            && long[..short.len()] == short[..]
            && long[short.len()..].iter().all(|&c| c == 0)
    }
}

impl Eq for ConceptHistogram {}

impl ConceptHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(concepts: usize) -> Self {
        Self {
            counts: vec![0; concepts],
            ..Self::default()
        }
    }

    pub fn from_assignments<'a>(assignments: impl IntoIterator<Item = &'a ConceptAssignment>) -> Self {
        let mut h = Self::new();
        for a in assignments {
            h.add(a);
        }
        h
    }

    /// Total frequency `T`.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.distinct
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn frequency(&self, concept: usize) -> u64 {
        self.counts.get(concept).copied().unwrap_or(0) as u64
    }

    /// Non-zero `(concept, frequency)` pairs in concept order.
    pub fn frequencies(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c as u64))
    }

    /// Entropy in bits; `None` while the histogram is empty.
    pub fn entropy(&self) -> Option<f64> {
        if self.total == 0 {
            return None;
        }
        if self.distinct == 1 {
            return Some(0.0);
        }
        let t = self.total as f64;
        let h = t.log2() - (self.flog_sum as f64 / FLOG_SCALE) / t;
        Some(h.max(0.0))
    }

    pub fn add(&mut self, a: &ConceptAssignment) {
        for c in a.indices() {
            self.increment(c);
        }
        self.total += a.len() as u64;
    }

    #[inline]
    fn increment(&mut self, c: usize) {
        if c >= self.counts.len() {
            self.counts.resize(c + 1, 0);
        }
        let f = self.counts[c] as u64;
        if f == 0 {
            self.distinct += 1;
        }
        self.flog_sum += flog_fixed(f + 1) - flog_fixed(f);
        self.counts[c] += 1;
    }

    /// Adds one input given as raw concept indices.
    pub(crate) fn add_indices(&mut self, concepts: &[u32]) {
        for &c in concepts {
            self.increment(c as usize);
        }
        self.total += concepts.len() as u64;
    }

    /// Undoes the immediately preceding [`add_indices`](Self::add_indices)
    /// of the same slice.
    pub(crate) fn undo_add_indices(&mut self, concepts: &[u32]) {
        for &c in concepts {
            let c = c as usize;
            let f = self.counts[c] as u64;
            self.flog_sum += flog_fixed(f - 1) - flog_fixed(f);
            self.counts[c] -= 1;
            if f == 1 {
                self.distinct -= 1;
            }
        }
        self.total -= concepts.len() as u64;
    }

    /// Inverse of [`add`](Self::add). Leaves the histogram untouched if any
    /// of the concepts is absent.
    pub fn remove(&mut self, a: &ConceptAssignment) -> Result<()> {
        if let Some(c) = a.indices().find(|&c| self.frequency(c) == 0) {
            return Err(Error::Accounting(c));
        }
        for c in a.indices() {
            let f = self.counts[c] as u64;
            self.flog_sum += flog_fixed(f - 1) - flog_fixed(f);
            self.counts[c] -= 1;
            if f == 1 {
                self.distinct -= 1;
            }
        }
        self.total -= a.len() as u64;
        Ok(())
    }
}

/// `logdet(V̂V̂ᵀ + εI)` for the row-normalized features `V̂` (natural log).
/// Returns `-inf` when the regularized Gram matrix is singular, which can
/// only happen for `ε = 0`.
pub fn gd_score(features: &EmbeddingMatrix, epsilon: f64) -> Result<f64> {
    if features.rows() == 0 {
        return Err(Error::UndefinedDiversity("empty subset".into()));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("GD epsilon must be finite and >= 0, got {epsilon}")));
    }
    let (b, d) = (features.rows(), features.cols());
    let mut normalized = Mat::<f64>::zeros(b, d);
    for (i, row) in features.iter_rows().enumerate() {
        let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateVector { what: "feature", row: i });
        }
        for (j, &v) in row.iter().enumerate() {
            normalized[(i, j)] = v as f64 / norm;
        }
    }
    let mut gram = &normalized * normalized.transpose();
    for i in 0..b {
        gram[(i, i)] += epsilon;
    }
    match gram.llt(Side::Lower) {
        Ok(llt) => {
            let l = llt.L();
            Ok(2.0 * (0..b).map(|i| l[(i, i)].ln()).sum::<f64>())
        }
        Err(_) => Ok(f64::NEG_INFINITY),
    }
}
