mod common;

use cbdsel::uncertainty::{UncertaintyMetric, UncertaintyVector};
use cbdsel::{datis_support, datis_uncertainty, gd_score, select_cbd, synth, DatisConfig, EmbeddingMatrix};
use common::*;

#[test]
fn histogram_tracks_recomputed_entropy() {
    assert!(histogram_fuzz(60, 11, true) < 1e-9);
}

#[test]
fn gd_matches_lu_determinant() {
    assert!(gd_sweep(60, 10, 32, 3) < 1e-6);
}

#[test]
fn gd_beyond_feature_rank_matches_lu() {
    // 12 rows in 4 dimensions: the Gram matrix is singular before ε.
    let m = synth::gaussian_matrix(12, 4, 1.0, 8);
    let got = gd_score(&m, 1e-8).unwrap();
    let want = gd_oracle(&m, 1e-8);
    assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
    assert!(got < 8.0 * (1e-8f64).ln() + 5.0);
}

#[test]
fn datis_hundred_point_two_class_instance() {
    let world = synth::gaussian_clusters(&synth::ClusterConfig {
        points: 100,
        dim: 3,
        clusters: 2,
        spread: 0.8,
        seed: 2024,
    });
    let queries = synth::gaussian_matrix(30, 3, 1.0, 2025);
    let predicted = synth::random_labels(30, 2, 2026);
    let cfg = DatisConfig::new(5, 1.0).unwrap();
    let got = datis_uncertainty(&queries, &predicted, &world.embeddings, &world.labels, &cfg).unwrap();
    let want = datis_oracle(&queries, &predicted, &world.embeddings, &world.labels, 5, 1.0);
    for (g, w) in got.scores().iter().zip(&want) {
        assert!((g - w).abs() < 1e-12, "{g} vs {w}");
    }
    assert_eq!(ranking(got.scores()), ranking(&want));
}

#[test]
fn datis_support_matches_sorted_oracle() {
    let train = synth::gaussian_matrix(80, 4, 1.0, 1);
    let labels = synth::random_labels(80, 4, 2);
    let z = synth::gaussian_matrix(10, 4, 1.0, 3);
    let cfg = DatisConfig::new(7, 0.7).unwrap();
    for row in z.iter_rows() {
        let got = datis_support(row, &train, &labels, &cfg).unwrap();
        let want = datis_support_oracle(row, &train, &labels, 7, 0.7);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn datis_random_instances() {
    let sweep = datis_sweep(15, 99);
    assert!(sweep.rankings_match);
    assert!(sweep.max_abs_error < 1e-9);
}

#[test]
fn datis_far_queries_do_not_underflow() {
    // Every weight underflows without rescaling; the support must still be
    // the nearest-first distribution.
    let train = EmbeddingMatrix::from_rows(&[[0.0f32], [1.0], [2.0]]).unwrap();
    let labels = cbdsel::LabelVector::new(vec![0, 1, 1], 2).unwrap();
    let p = datis_support(&[1000.0], &train, &labels, &DatisConfig::new(3, 1.0).unwrap()).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p[1] > 0.99);
}

#[test]
fn selector_follows_greedy_oracle() {
    for seed in 0..20 {
        let (sets, u) = sixty_candidate_fixture(seed);
        for budget in [1, 5, 10, 20, 37, 60] {
            selector_matches_oracle(&sets, &u, budget).unwrap_or_else(|e| panic!("seed {seed}, b={budget}: {e}"));
        }
    }
}

#[test]
fn redundant_pool_fills_with_skipped_candidates() {
    let (sets, u) = redundant_pool(20, 5);
    let uv = UncertaintyVector::new(u, UncertaintyMetric::Margin).unwrap();
    let r = select_cbd(&assignments_of(&sets), &uv, 10).unwrap();
    assert_eq!(r.selected.len(), 10);
    assert_eq!(r.seed_count, 1);
    assert_eq!(r.fill_count, 4);
    assert_eq!(&r.selected[..6], &[0, 20, 21, 22, 23, 24]);
    assert_eq!(&r.selected[6..], &[1, 2, 3, 4]);
    let t = r.greedy_trajectory();
    assert_eq!(t.len(), 5);
    assert!(t.windows(2).all(|w| w[1] > w[0]));
}
