//! Correlation between CBD and GD over controlled-diversity subsets.

use std::fmt::Write as _;

use super::stats::spearman_rho;
use super::subsets::{build_controlled_subsets, ControlledSubsetPlan};
use crate::concept_space::{assign_concepts, Rcs};
use crate::diversity::{cbd_score, gd_score};
use crate::embstore::{EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub plan: usize,
    pub step: usize,
    pub class_count: usize,
    pub cbd: f64,
    pub gd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelationRow>,
    /// Spearman ρ over all subsets of all plans.
    pub rho: f64,
    /// ρ within each plan; `None` when a plan has fewer than two subsets or
    /// no rank variance.
    pub per_plan_rho: Vec<Option<f64>>,
}

impl CorrelationReport {
    pub fn subsets(&self) -> usize {
        self.rows.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("plan,step,class_count,cbd,gd\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.plan, r.step, r.class_count, r.cbd, r.gd);
        }
        out
    }
}

/// Scores every controlled subset with CBD (top-m concepts of the shared
/// embeddings against the RCS) and GD (on `features_gd`), and correlates
/// the two.
pub fn run_rq1(
    embeddings_shared: &EmbeddingMatrix,
    features_gd: &EmbeddingMatrix,
    rcs: &Rcs,
    labels: &LabelVector,
    plans: &[ControlledSubsetPlan],
    m: usize,
    gd_epsilon: f64,
) -> Result<CorrelationReport> {
    if embeddings_shared.rows() != labels.len() || features_gd.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} shared embeddings, {} GD features and {} labels",
            embeddings_shared.rows(),
            features_gd.rows(),
            labels.len()
        )));
    }
    if plans.is_empty() {
        return Err(Error::Plan("no subset plans given".into()));
    }
    let assignments = assign_concepts(embeddings_shared, rcs.space(), m)?;

    let mut rows = Vec::new();
    let mut per_plan_rho = Vec::with_capacity(plans.len());
    for (p, plan) in plans.iter().enumerate() {
        let subsets = build_controlled_subsets(labels, plan)?;
        let start = rows.len();
        for (step, subset) in subsets.iter().enumerate() {
            let cbd = cbd_score(subset.iter().map(|&i| &assignments[i]))?;
            let gd = gd_score(&features_gd.select_rows(subset)?, gd_epsilon)?;
            rows.push(CorrelationRow {
                plan: p,
                step,
                class_count: plan.schedule()[step],
                cbd,
                gd,
            });
        }
        let (c, g): (Vec<f64>, Vec<f64>) = rows[start..].iter().map(|r| (r.cbd, r.gd)).unzip();
        per_plan_rho.push(spearman_rho(&c, &g).ok());
    }
    let (c, g): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r.cbd, r.gd)).unzip();
    let rho = spearman_rho(&c, &g)?;
    Ok(CorrelationReport {
        rows,
        rho,
        per_plan_rho,
    })
}
