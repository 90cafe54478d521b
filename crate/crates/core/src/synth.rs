//! Seeded synthetic fixtures: Gaussian matrices, affine pairs, clustered
//! worlds with per-cluster concepts, and softmax outputs.
//!
//! All generators use ChaCha8 so that a seed produces the same data on
//! every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embstore::{ConceptSpace, EmbeddingMatrix, LabelVector, ProbabilityMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normals(rng: &mut ChaCha8Rng, count: usize, scale: f64) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

/// `rows x cols` matrix of i.i.d. `N(0, scale²)` entries.
pub fn gaussian_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> EmbeddingMatrix {
    let mut r = rng(seed);
    EmbeddingMatrix::from_f64(rows, cols, &normals(&mut r, rows * cols, scale)).expect("finite gaussian draws")
}

/// Ground-truth affine map used to generate a pair.
#[derive(Debug, Clone)]
pub struct AffineTruth {
    /// `source_dim x target_dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub source_dim: usize,
    pub target_dim: usize,
}

impl AffineTruth {
    pub fn apply(&self, x: &[f32]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.weights[i * self.target_dim + j] * xi as f64;
            }
        }
        out
    }
}

/// Source rows `x ~ N(0, I)`, targets `W★ᵀx + b★ + N(0, noise²)` with
/// `W★ ~ N(0, 1/source_dim)` and `b★ ~ N(0, 1)`, so targets are unit scale.
pub fn affine_pair(
    n: usize,
    source_dim: usize,
    target_dim: usize,
    noise: f64,
    seed: u64,
) -> (EmbeddingMatrix, EmbeddingMatrix, AffineTruth) {
    let mut r = rng(seed);
    let truth = AffineTruth {
        weights: normals(&mut r, source_dim * target_dim, 1.0 / (source_dim as f64).sqrt()),
        bias: normals(&mut r, target_dim, 1.0),
        source_dim,
        target_dim,
    };
    let source = EmbeddingMatrix::from_f64(n, source_dim, &normals(&mut r, n * source_dim, 1.0)).unwrap();
    let mut target = Vec::with_capacity(n * target_dim);
    for row in source.iter_rows() {
        let y = truth.apply(row);
        let eps = normals(&mut r, target_dim, noise);
        target.extend(y.iter().zip(&eps).map(|(a, e)| a + e));
    }
    let target = EmbeddingMatrix::from_f64(n, target_dim, &target).unwrap();
    (source, target, truth)
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub points: usize,
    pub dim: usize,
    pub clusters: usize,
    /// Standard deviation of each coordinate around its cluster center.
    pub spread: f64,
    pub seed: u64,
}

/// Points drawn around well-separated random centers.
#[derive(Debug, Clone)]
pub struct ClusterWorld {
    pub embeddings: EmbeddingMatrix,
    pub labels: LabelVector,
    /// One unit-norm center per cluster.
    pub centers: EmbeddingMatrix,
}

/// Gaussian clusters with unit-norm random centers. Labels are assigned
/// round-robin so every cluster holds `points / clusters` points (±1),
/// then the rows are shuffled.
pub fn gaussian_clusters(cfg: &ClusterConfig) -> ClusterWorld {
    let mut r = rng(cfg.seed);
    let mut centers = Vec::with_capacity(cfg.clusters * cfg.dim);
    for _ in 0..cfg.clusters {
        let c = normals(&mut r, cfg.dim, 1.0);
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        centers.extend(c.iter().map(|v| v / norm));
    }
    let mut labels: Vec<u32> = (0..cfg.points).map(|i| (i % cfg.clusters) as u32).collect();
    labels.shuffle(&mut r);
    let mut data = Vec::with_capacity(cfg.points * cfg.dim);
    for &l in &labels {
        let center = &centers[l as usize * cfg.dim..(l as usize + 1) * cfg.dim];
        let noise = normals(&mut r, cfg.dim, cfg.spread);
        data.extend(center.iter().zip(&noise).map(|(c, e)| c + e));
    }
    ClusterWorld {
        embeddings: EmbeddingMatrix::from_f64(cfg.points, cfg.dim, &data).unwrap(),
        labels: LabelVector::new(labels, cfg.clusters as u32).unwrap(),
        centers: EmbeddingMatrix::from_f64(cfg.clusters, cfg.dim, &centers).unwrap(),
    }
}

/// `per_cluster` concepts around each center, each perturbed by
/// `N(0, jitter²)` per coordinate. Concept `c * per_cluster + j` belongs to
/// cluster `c` and is named `cluster{c}_concept{j}`.
pub fn cluster_concepts(centers: &EmbeddingMatrix, per_cluster: usize, jitter: f64, seed: u64) -> ConceptSpace {
    let mut r = rng(seed);
    let dim = centers.cols();
    let mut names = Vec::with_capacity(centers.rows() * per_cluster);
    let mut data = Vec::with_capacity(centers.rows() * per_cluster * dim);
    for (c, center) in centers.iter_rows().enumerate() {
        for j in 0..per_cluster {
            names.push(format!("cluster{c}_concept{j}"));
            let noise = normals(&mut r, dim, jitter);
            data.extend(center.iter().zip(&noise).map(|(&v, e)| v as f64 + e));
        }
    }
    let embeddings = EmbeddingMatrix::from_f64(names.len(), dim, &data).unwrap();
    ConceptSpace::new(names, embeddings).unwrap()
}

/// Softmax of `N(0, sharpness²)` logits, renormalized after rounding to `f32`.
pub fn softmax_probabilities(n: usize, classes: usize, sharpness: f64, seed: u64) -> ProbabilityMatrix {
    let mut r = rng(seed);
    let mut data = Vec::with_capacity(n * classes);
    for _ in 0..n {
        let logits = normals(&mut r, classes, sharpness);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        data.extend(exps.iter().map(|e| (e / total) as f32));
    }
    ProbabilityMatrix::new(n, classes, data).expect("softmax rows sum to one")
}

/// Uniform integer labels in `0..classes`.
pub fn random_labels(n: usize, classes: usize, seed: u64) -> LabelVector {
    let mut r = rng(seed);
    let labels = (0..n).map(|_| r.random_range(0..classes as u32)).collect();
    LabelVector::new(labels, classes as u32).unwrap()
}

/// Parameters of a complete pipeline world, see [`pipeline_fixture`].
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub points: usize,
    pub classes: usize,
    pub shared_dim: usize,
    /// Width of the classifier representation; at least `shared_dim` keeps
    /// the representation-to-shared map exactly affine. Wider
    /// representations are rank deficient, so fit them with a positive ridge.
    pub rep_dim: usize,
    pub concepts_per_class: usize,
    pub spread: f64,
    pub seed: u64,
}

/// Everything the selection pipeline consumes, generated together.
#[derive(Debug, Clone)]
pub struct PipelineFixture {
    /// Embeddings in the shared vision-language space.
    pub shared: EmbeddingMatrix,
    /// Classifier representations: a random affine image of `shared`.
    pub reps: EmbeddingMatrix,
    pub labels: LabelVector,
    /// Softmax of noisy scaled cosine similarities to the class centers.
    pub probs: ProbabilityMatrix,
    pub knowledge_base: ConceptSpace,
}

pub fn pipeline_fixture(cfg: &PipelineConfig) -> PipelineFixture {
    let world = gaussian_clusters(&ClusterConfig {
        points: cfg.points,
        dim: cfg.shared_dim,
        clusters: cfg.classes,
        spread: cfg.spread,
        seed: cfg.seed,
    });
    let knowledge_base = cluster_concepts(&world.centers, cfg.concepts_per_class, 0.05, cfg.seed ^ 0x5eed);
    let mut r = rng(cfg.seed.wrapping_add(1));
    let lift = normals(&mut r, cfg.shared_dim * cfg.rep_dim, 1.0 / (cfg.shared_dim as f64).sqrt());
    let offset = normals(&mut r, cfg.rep_dim, 1.0);
    let mut reps = Vec::with_capacity(cfg.points * cfg.rep_dim);
    let mut probs = Vec::with_capacity(cfg.points * cfg.classes);
    for row in world.embeddings.iter_rows() {
        for j in 0..cfg.rep_dim {
            let v: f64 = row
                .iter()
                .enumerate()
                .map(|(i, &x)| x as f64 * lift[i * cfg.rep_dim + j])
                .sum();
            reps.push(v + offset[j]);
        }
        let norm = row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let noise = normals(&mut r, cfg.classes, 0.5);
        let logits: Vec<f64> = world
            .centers
            .iter_rows()
            .zip(&noise)
            .map(|(c, e)| 4.0 * row.iter().zip(c).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / norm + e)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        probs.extend(exps.iter().map(|e| (e / total) as f32));
    }
    PipelineFixture {
        reps: EmbeddingMatrix::from_f64(cfg.points, cfg.rep_dim, &reps).unwrap(),
        probs: ProbabilityMatrix::new(cfg.points, cfg.classes, probs).expect("softmax rows sum to one"),
        shared: world.embeddings,
        labels: world.labels,
        knowledge_base,
    }
}
