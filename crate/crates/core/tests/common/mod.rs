//! Independent reference implementations, and drivers that compare the
//! library against them. Shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::HashMap;

use cbdsel::selector::Phase;
use cbdsel::{ConceptAssignment, EmbeddingMatrix, LabelVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shannon entropy in bits of the pooled concept multiset, by direct counting.
pub fn entropy_oracle(sets: &[Vec<usize>]) -> f64 {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    let mut total = 0.0;
    for s in sets {
        for &c in s {
            *counts.entry(c).or_insert(0.0) += 1.0;
            total += 1.0;
        }
    }
    let mut h = 0.0;
    for &f in counts.values() {
        let p = f / total;
        h -= p * p.log2();
    }
    h
}

pub fn random_concept_set(r: &mut ChaCha8Rng, concepts: usize, m: usize) -> Vec<usize> {
    let mut s = sample(r, concepts, m.min(concepts)).into_vec();
    s.sort_unstable();
    s
}

pub fn assignments_of(sets: &[Vec<usize>]) -> Vec<ConceptAssignment> {
    sets.iter()
        .enumerate()
        .map(|(i, s)| ConceptAssignment::from_indices(i, s).unwrap())
        .collect()
}

/// log det of a symmetric positive definite matrix via Gaussian elimination
/// with partial pivoting. Returns `-inf` if a pivot is not positive.
pub fn lu_logdet(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut logdet = 0.0;
    let mut sign = 1.0;
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        if a[p][k] == 0.0 {
            return f64::NEG_INFINITY;
        }
        if p != k {
            a.swap(p, k);
            sign = -sign;
        }
        let pivot = a[k][k];
        if pivot < 0.0 {
            sign = -sign;
        }
        logdet += pivot.abs().ln();
        let (upper, lower) = a.split_at_mut(k + 1);
        let pivot_row = &upper[k];
        for row in lower {
            let f = row[k] / pivot;
            for (x, p) in row[k..].iter_mut().zip(&pivot_row[k..]) {
                *x -= f * p;
            }
        }
    }
    if sign > 0.0 {
        logdet
    } else {
        f64::NEG_INFINITY
    }
}

/// `V̂V̂ᵀ + εI` for the row-normalized features.
pub fn normalized_gram(features: &EmbeddingMatrix, eps: f64) -> Vec<Vec<f64>> {
    let rows: Vec<Vec<f64>> = features
        .iter_rows()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|&x| x as f64).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    let n = rows.len();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            g[i][j] = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum::<f64>();
        }
        g[i][i] += eps;
    }
    g
}

pub fn gd_oracle(features: &EmbeddingMatrix, eps: f64) -> f64 {
    lu_logdet(normalized_gram(features, eps))
}

/// Neighbor support by sorting every training distance and applying the
/// exponential weights without any rescaling.
pub fn datis_support_oracle(z: &[f32], train: &EmbeddingMatrix, labels: &LabelVector, k: usize, tau: f64) -> Vec<f64> {
    let mut d: Vec<(f64, usize)> = train
        .iter_rows()
        .enumerate()
        .map(|(t, row)| {
            let s: f64 = z.iter().zip(row).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
            (s, t)
        })
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut num = vec![0.0; labels.classes()];
    let mut den = 0.0;
    for &(dist, t) in &d[..k] {
        let w = (-dist / tau).exp();
        num[labels.get(t)] += w;
        den += w;
    }
    num.iter().map(|v| v / den).collect()
}

pub fn datis_oracle(
    z: &EmbeddingMatrix,
    predicted: &LabelVector,
    train: &EmbeddingMatrix,
    labels: &LabelVector,
    k: usize,
    tau: f64,
) -> Vec<f64> {
    (0..z.rows())
        .map(|i| {
            let p = datis_support_oracle(z.row(i), train, labels, k, tau);
            let m = predicted.get(i);
            let pn = (0..p.len()).filter(|&c| c != m).map(|c| p[c]).fold(0.0, f64::max);
            if p[m] == 0.0 {
                1e12
            } else {
                pn / p[m]
            }
        })
        .collect()
}

/// Ranking used throughout: score descending, index ascending.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleStep {
    pub candidate: usize,
    pub phase: Phase,
    pub accepted: bool,
    pub before: Option<f64>,
    pub after: f64,
}

/// Greedy selection recomputing entropy from scratch at every step.
pub fn greedy_oracle(sets: &[Vec<usize>], uncertainty: &[f64], budget: usize) -> (Vec<usize>, Vec<OracleStep>) {
    let order = ranking(uncertainty);
    let seed = (budget / 10).max(1);
    let mut chosen: Vec<usize> = Vec::new();
    let mut steps = Vec::new();
    let h = |idx: &[usize]| {
        let picked: Vec<Vec<usize>> = idx.iter().map(|&i| sets[i].clone()).collect();
        entropy_oracle(&picked)
    };
    for &c in &order[..seed] {
        let before = if chosen.is_empty() { None } else { Some(h(&chosen)) };
        chosen.push(c);
        steps.push(OracleStep { candidate: c, phase: Phase::Seed, accepted: true, before, after: h(&chosen) });
    }
    let mut skipped = Vec::new();
    for &c in &order[seed..] {
        if chosen.len() == budget {
            break;
        }
        let current = h(&chosen);
        let mut trial = chosen.clone();
        trial.push(c);
        let next = h(&trial);
        let accepted = next > current + 1e-12;
        steps.push(OracleStep {
            candidate: c,
            phase: Phase::Greedy,
            accepted,
            before: Some(current),
            after: if accepted { next } else { current },
        });
        if accepted {
            chosen = trial;
        } else {
            skipped.push(c);
        }
    }
    for &c in &skipped {
        if chosen.len() == budget {
            break;
        }
        let before = h(&chosen);
        chosen.push(c);
        steps.push(OracleStep { candidate: c, phase: Phase::Fill, accepted: true, before: Some(before), after: h(&chosen) });
    }
    (chosen, steps)
}

/// A fixed 60-candidate pool over 12 concepts: concept sets of size 3 drawn
/// from a skewed distribution so that many candidates are redundant.
pub fn sixty_candidate_fixture(seed: u64) -> (Vec<Vec<usize>>, Vec<f64>) {
    let mut r = rng(seed);
    let sets = (0..60)
        .map(|_| {
            let mut s: Vec<usize> = Vec::new();
            while s.len() < 3 {
                let c = if r.random_bool(0.6) { r.random_range(0..4) } else { r.random_range(0..12) };
                if !s.contains(&c) {
                    s.push(c);
                }
            }
            s.sort_unstable();
            s
        })
        .collect();
    let uncertainty = (0..60).map(|_| (r.random_range(0..20) as f64) / 20.0).collect();
    (sets, uncertainty)
}

/// Runs `sequences` random add/remove sequences against a
/// [`cbdsel::ConceptHistogram`] and returns the largest deviation from
/// `cbd_score`, and also from the counting oracle if `with_oracle` is set.
pub fn histogram_fuzz(sequences: usize, seed: u64, with_oracle: bool) -> f64 {
    use cbdsel::{cbd_score, ConceptHistogram};
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..sequences {
        let concepts = r.random_range(10..=64);
        let ops = r.random_range(1..=600);
        let add_bias = r.random_range(0.5..0.95);
        let mut hist = ConceptHistogram::new();
        let mut present: Vec<ConceptAssignment> = Vec::new();
        let mut next_image = 0;
        for _ in 0..ops {
            let add = present.is_empty() || (present.len() < 500 && r.random_bool(add_bias));
            if add {
                let set = random_concept_set(&mut r, concepts, 10);
                let a = ConceptAssignment::from_indices(next_image, &set).unwrap();
                next_image += 1;
                hist.add(&a);
                present.push(a);
            } else {
                let i = r.random_range(0..present.len());
                let a = present.swap_remove(i);
                hist.remove(&a).unwrap();
            }
            match hist.entropy() {
                None => assert!(present.is_empty()),
                Some(h) => {
                    if with_oracle {
                        let sets: Vec<Vec<usize>> = present.iter().map(|a| a.indices().collect()).collect();
                        worst = worst.max((h - entropy_oracle(&sets)).abs());
                    }
                    worst = worst.max((h - cbd_score(&present).unwrap()).abs());
                }
            }
        }
    }
    worst
}

/// Largest relative deviation of `gd_score` from the LU oracle over random
/// matrices with up to `max_rows` rows and `max_cols` columns.
pub fn gd_sweep(count: usize, max_rows: usize, max_cols: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let rows = r.random_range(1..=max_rows);
        let cols = r.random_range(1..=max_cols);
        let m = cbdsel::synth::gaussian_matrix(rows, cols, 1.0, seed.wrapping_mul(1000) + i as u64);
        let got = cbdsel::gd_score(&m, 1e-8).unwrap();
        let want = gd_oracle(&m, 1e-8);
        let rel = if got == want { 0.0 } else { (got - want).abs() / want.abs() };
        worst = worst.max(rel);
    }
    worst
}

pub struct DatisSweep {
    pub rankings_match: bool,
    pub max_abs_error: f64,
}

/// Random DATIS instances with `n ≤ 200` training rows and `C ≤ 5`.
pub fn datis_sweep(instances: usize, seed: u64) -> DatisSweep {
    use cbdsel::{datis_uncertainty, DatisConfig};
    let mut r = rng(seed);
    let mut out = DatisSweep { rankings_match: true, max_abs_error: 0.0 };
    for i in 0..instances {
        let n = r.random_range(20..=200);
        let classes = r.random_range(2..=5);
        let dim = r.random_range(2..=8);
        let queries = r.random_range(5..=40);
        let k = r.random_range(1..=n.min(15));
        let tau = r.random_range(0.5..4.0);
        let s = seed.wrapping_mul(7919) + i as u64 * 4;
        let train = cbdsel::synth::gaussian_matrix(n, dim, 1.0, s);
        let labels = cbdsel::synth::random_labels(n, classes, s + 1);
        let z = cbdsel::synth::gaussian_matrix(queries, dim, 1.0, s + 2);
        let pred = cbdsel::synth::random_labels(queries, classes, s + 3);
        let got = datis_uncertainty(&z, &pred, &train, &labels, &DatisConfig::new(k, tau).unwrap()).unwrap();
        let want = datis_oracle(&z, &pred, &train, &labels, k, tau);
        for (g, w) in got.scores().iter().zip(&want) {
            out.max_abs_error = out.max_abs_error.max((g - w).abs());
        }
        if ranking(got.scores()) != ranking(&want) {
            out.rankings_match = false;
        }
    }
    out
}

/// Compares `select_cbd` against the from-scratch greedy oracle step by step.
pub fn selector_matches_oracle(sets: &[Vec<usize>], uncertainty: &[f64], budget: usize) -> Result<(), String> {
    use cbdsel::uncertainty::{UncertaintyMetric, UncertaintyVector};
    let u = UncertaintyVector::new(uncertainty.to_vec(), UncertaintyMetric::Margin).unwrap();
    let got = cbdsel::select_cbd(&assignments_of(sets), &u, budget).map_err(|e| e.to_string())?;
    let (chosen, steps) = greedy_oracle(sets, uncertainty, budget);
    if got.selected != chosen {
        return Err(format!("selected {:?}, oracle {:?}", got.selected, chosen));
    }
    if got.steps.len() != steps.len() {
        return Err(format!("{} steps, oracle {}", got.steps.len(), steps.len()));
    }
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    for (i, (g, o)) in got.steps.iter().zip(&steps).enumerate() {
        let before_ok = match (g.cbd_before, o.before) {
            (None, None) => true,
            (Some(a), Some(b)) => close(a, b),
            _ => false,
        };
        if g.candidate != o.candidate || g.phase != o.phase || g.accepted != o.accepted || !before_ok || !close(g.cbd_after, o.after) {
            return Err(format!("step {i}: {g:?} vs oracle {o:?}"));
        }
    }
    if got.selected.len() != budget {
        return Err(format!("{} selected for budget {budget}", got.selected.len()));
    }
    Ok(())
}

/// Candidates 0..redundant all carry the same concepts; the remaining
/// `distinct` candidates each bring a fresh concept. Redundant candidates
/// are the most uncertain.
pub fn redundant_pool(redundant: usize, distinct: usize) -> (Vec<Vec<usize>>, Vec<f64>) {
    let mut sets = vec![vec![0, 1, 2]; redundant];
    sets.extend((0..distinct).map(|j| vec![0, 3 + j]));
    let n = sets.len();
    let uncertainty = (0..n).map(|i| 1.0 - i as f64 / n as f64).collect();
    (sets, uncertainty)
}
