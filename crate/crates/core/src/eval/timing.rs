//! Wall-clock benchmarks for diversity scoring and for selection.
//!
//! Each measurement is preceded by warm-up runs that are discarded, and
//! reported as mean and sample standard deviation in milliseconds.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::concept_space::ConceptAssignment;
use crate::diversity::{cbd_score, gd_score, DEFAULT_GD_EPSILON};
use crate::embstore::{EmbeddingMatrix, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::selector::{select_cbd, select_random, select_top_uncertainty, SelectionResult, SelectorKind};
use crate::uncertainty::margin_uncertainty;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingOptions {
    pub warmup: usize,
    pub gd_epsilon: f64,
    /// Score subsets concurrently. Per-subset times are still measured
    /// individually but contend for cores, so report them separately.
    pub parallel: bool,
}

impl Default for TimingOptions {
    fn default() -> Self {
        Self {
            warmup: 3,
            gd_epsilon: DEFAULT_GD_EPSILON,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub samples: usize,
}

impl TimingStats {
    pub fn from_durations(samples: &[Duration]) -> Self {
        let ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        let n = ms.len();
        if n == 0 {
            return Self {
                mean_ms: f64::NAN,
                std_ms: f64::NAN,
                samples: 0,
            };
        }
        let mean = ms.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean_ms: mean,
            std_ms: std,
            samples: n,
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (Duration, T) {
    let start = Instant::now();
    let out = black_box(f());
    (start.elapsed(), out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityTiming {
    pub size: usize,
    pub repeats: usize,
    pub parallel: bool,
    pub cbd: TimingStats,
    pub gd: TimingStats,
}

impl DiversityTiming {
    /// How many times slower GD is than CBD on average.
    pub fn gd_over_cbd(&self) -> f64 {
        self.gd.mean_ms / self.cbd.mean_ms
    }
}

/// Times CBD and GD on the same `repeats` random subsets of each size.
pub fn time_diversity(
    features_gd: &EmbeddingMatrix,
    assignments: &[ConceptAssignment],
    sizes: &[usize],
    repeats: usize,
    seed: u64,
    opts: &TimingOptions,
) -> Result<Vec<DiversityTiming>> {
    let n = assignments.len();
    if features_gd.rows() != n {
        return Err(Error::Shape(format!(
            "{} GD feature rows but {n} concept assignments",
            features_gd.rows()
        )));
    }
    if repeats == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size == 0 || size > n {
            return Err(Error::Budget { budget: size, pool: n });
        }
        let subsets: Vec<Vec<usize>> = (0..repeats)
            .map(|_| rand::seq::index::sample(&mut rng, n, size).into_vec())
            .collect();

        let score_cbd = |s: &[usize]| timed(|| cbd_score(s.iter().map(|&i| &assignments[i])));
        let score_gd = |s: &[usize]| {
            timed(|| features_gd.select_rows(s).and_then(|f| gd_score(&f, opts.gd_epsilon)))
        };

        for _ in 0..opts.warmup {
            score_cbd(&subsets[0]).1?;
            score_gd(&subsets[0]).1?;
        }

        let measure = |s: &Vec<usize>| -> Result<(Duration, Duration)> {
            let (tc, c) = score_cbd(s);
            c?;
            let (tg, g) = score_gd(s);
            g?;
            Ok((tc, tg))
        };
        let times: Vec<(Duration, Duration)> = if opts.parallel {
            subsets.par_iter().map(measure).collect::<Result<_>>()?
        } else {
            subsets.iter().map(measure).collect::<Result<_>>()?
        };
        let (cbd, gd): (Vec<Duration>, Vec<Duration>) = times.into_iter().unzip();
        rows.push(DiversityTiming {
            size,
            repeats,
            parallel: opts.parallel,
            cbd: TimingStats::from_durations(&cbd),
            gd: TimingStats::from_durations(&gd),
        });
    }
    Ok(rows)
}

pub fn diversity_timing_csv(rows: &[DiversityTiming]) -> String {
    let mut out = String::from("size,repeats,parallel,cbd_mean_ms,cbd_std_ms,gd_mean_ms,gd_std_ms,gd_over_cbd\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.3}",
            r.size,
            r.repeats,
            r.parallel,
            r.cbd.mean_ms,
            r.cbd.std_ms,
            r.gd.mean_ms,
            r.gd.std_ms,
            r.gd_over_cbd()
        );
    }
    out
}

/// Candidate pool for selection benchmarks. Uncertainty is recomputed from
/// `probs` inside every timed run, so ranking cost is included.
#[derive(Debug, Clone, Copy)]
pub struct SelectionPool<'a> {
    pub probs: &'a ProbabilityMatrix,
    pub assignments: &'a [ConceptAssignment],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTiming {
    pub selector: SelectorKind,
    pub budget: usize,
    pub stats: TimingStats,
    pub fill_count: usize,
}

fn run_selector(pool: &SelectionPool<'_>, selector: SelectorKind, budget: usize, seed: u64) -> Result<SelectionResult> {
    match selector {
        SelectorKind::Cbd => {
            let u = margin_uncertainty(pool.probs)?;
            select_cbd(pool.assignments, &u, budget)
        }
        SelectorKind::TopUncertainty => {
            let u = margin_uncertainty(pool.probs)?;
            select_top_uncertainty(&u, budget)
        }
        SelectorKind::Random => select_random(pool.probs.rows(), budget, seed),
    }
}

/// Wall-clock time per selector and budget, margin uncertainty included.
pub fn time_selection(
    pool: &SelectionPool<'_>,
    selectors: &[SelectorKind],
    budgets: &[usize],
    repeats: usize,
    seed: u64,
    opts: &TimingOptions,
) -> Result<Vec<SelectionTiming>> {
    let n = pool.probs.rows();
    if pool.assignments.len() != n {
        return Err(Error::Shape(format!(
            "{} probability rows but {} concept assignments",
            n,
            pool.assignments.len()
        )));
    }
    if repeats == 0 {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for &selector in selectors {
        for &budget in budgets {
            if budget == 0 || budget > n {
                return Err(Error::Budget { budget, pool: n });
            }
            for _ in 0..opts.warmup {
                run_selector(pool, selector, budget, seed)?;
            }
            let mut samples = Vec::with_capacity(repeats);
            let mut fill_count = 0;
            for _ in 0..repeats {
                let (t, r) = timed(|| run_selector(pool, selector, budget, seed));
                fill_count = r?.fill_count;
                samples.push(t);
            }
            rows.push(SelectionTiming {
                selector,
                budget,
                stats: TimingStats::from_durations(&samples),
                fill_count,
            });
        }
    }
    Ok(rows)
}

pub fn selection_timing_csv(rows: &[SelectionTiming]) -> String {
    let mut out = String::from("selector,budget,repeats,mean_ms,std_ms,fill_count\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{}",
            r.selector, r.budget, r.stats.samples, r.stats.mean_ms, r.stats.std_ms, r.fill_count
        );
    }
    out
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn zero_repeats_give_empty_tables() {
        let f = synth::gaussian_matrix(10, 4, 1.0, 1);
        let a: Vec<_> = (0..10).map(|i| ConceptAssignment::from_indices(i, &[i % 3]).unwrap()).collect();
        assert!(time_diversity(&f, &a, &[5], 0, 0, &TimingOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn stats_of_known_samples() {
        let s = TimingStats::from_durations(&[Duration::from_millis(1), Duration::from_millis(3)]);
        assert!((s.mean_ms - 2.0).abs() < 1e-9);
        assert!((s.std_ms - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [10.0, 100.0, 1000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        assert!((loglog_slope(&xs, &ys) - 1.7).abs() < 1e-9);
    }

    #[test]
    fn selection_tables_cover_every_pair() {
        let probs = synth::softmax_probabilities(200, 5, 1.0, 2);
        let a: Vec<_> = (0..200)
            .map(|i| ConceptAssignment::from_indices(i, &[i % 17, 20 + i % 5]).unwrap())
            .collect();
        let pool = SelectionPool { probs: &probs, assignments: &a };
        let kinds = [SelectorKind::Cbd, SelectorKind::TopUncertainty, SelectorKind::Random];
        let opts = TimingOptions { warmup: 1, ..TimingOptions::default() };
        let rows = time_selection(&pool, &kinds, &[10, 50], 2, 0, &opts).unwrap();
        assert_eq!(rows.len(), 6);
        let csv = selection_timing_csv(&rows);
        assert_eq!(csv.lines().count(), 7);
        assert!(time_selection(&pool, &kinds, &[201], 1, 0, &opts).is_err());
    }
}
