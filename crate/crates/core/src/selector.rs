//! Budgeted input selection: the CBD-gated greedy selector and the two
//! baselines it is compared against.
//!
//! [`select_cbd`] ranks candidates by uncertainty, seeds the subset with the
//! top `max(1, ⌊b/10⌋)`, then scans the rest in rank order and keeps a
//! candidate only if it strictly raises the subset's CBD. If the pool runs
//! out before `b` inputs are accepted, the highest-ranked rejected
//! candidates fill the remainder; `fill_count` reports how many.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concept_space::ConceptAssignment;
use crate::diversity::ConceptHistogram;
use crate::error::{Error, Result};
use crate::uncertainty::{UncertaintyMetric, UncertaintyVector};

/// A candidate must raise CBD by more than this many bits to be accepted.
/// Smaller differences are floating-point noise between equal entropies.
pub const CBD_IMPROVEMENT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Cbd,
    TopUncertainty,
    Random,
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectorKind::Cbd => "cbd",
            SelectorKind::TopUncertainty => "top_uncertainty",
            SelectorKind::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Seed,
    Greedy,
    Fill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub candidate: usize,
    pub phase: Phase,
    pub accepted: bool,
    /// `None` before the first input is selected.
    pub cbd_before: Option<f64>,
    pub cbd_after: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub selector: Option<SelectorKind>,
    pub uncertainty_metric: Option<UncertaintyMetric>,
    pub m: Option<usize>,
    pub k: Option<usize>,
    pub tau: Option<f64>,
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
}

/// Selected indices in selection order, plus diagnostics.
///
/// Serialized field names (`selected`, `budget`, `seed_count`,
/// `fill_count`, `provenance`, `steps`) are stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<usize>,
    pub budget: usize,
    pub seed_count: usize,
    pub fill_count: usize,
    pub provenance: Provenance,
    pub steps: Vec<SelectionStep>,
}

impl SelectionResult {
    /// CBD after each accepted greedy step.
    pub fn greedy_trajectory(&self) -> Vec<f64> {
        self.steps
            .iter()
            .filter(|s| s.phase == Phase::Greedy && s.accepted)
            .map(|s| s.cbd_after)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("selection result serializes")
    }
}

fn check_budget(budget: usize, pool: usize) -> Result<()> {
    if budget == 0 || budget > pool {
        return Err(Error::Budget { budget, pool });
    }
    Ok(())
}

/// Seed-phase size for a budget: `max(1, ⌊b/10⌋)`.
pub fn seed_size(budget: usize) -> usize {
    (budget / 10).max(1)
}

/// Candidate indices sorted by uncertainty descending, ties by index.
pub fn rank_by_uncertainty(uncertainty: &UncertaintyVector) -> Vec<usize> {
    let scores = uncertainty.scores();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn select_cbd(
    assignments: &[ConceptAssignment],
    uncertainty: &UncertaintyVector,
    budget: usize,
) -> Result<SelectionResult> {
    let n = assignments.len();
    if uncertainty.len() != n {
        return Err(Error::Shape(format!(
            "{n} concept assignments but {} uncertainty scores",
            uncertainty.len()
        )));
    }
    check_budget(budget, n)?;
    if let Some(a) = assignments.iter().find(|a| a.is_empty()) {
        return Err(Error::UndefinedDiversity(format!("candidate {} has no concepts", a.image())));
    }

    let ranked = rank_by_uncertainty(uncertainty);
    let seed_count = seed_size(budget);

    // Concept indices laid out contiguously in rank order.
    let mut offsets = Vec::with_capacity(n + 1);
    let mut flat: Vec<u32> = Vec::with_capacity(assignments.iter().map(ConceptAssignment::len).sum());
    let mut width = 0;
    offsets.push(0);
    for &c in &ranked {
        for i in assignments[c].indices() {
            flat.push(i as u32);
            width = width.max(i + 1);
        }
        offsets.push(flat.len());
    }
    let concepts_of = |rank: usize| &flat[offsets[rank]..offsets[rank + 1]];

    let mut hist = ConceptHistogram::with_capacity(width);
    let mut selected = Vec::with_capacity(budget);
    let mut steps = Vec::with_capacity(n);

    for (rank, &c) in ranked[..seed_count].iter().enumerate() {
        let before = hist.entropy();
        hist.add_indices(concepts_of(rank));
        selected.push(c);
        steps.push(SelectionStep {
            candidate: c,
            phase: Phase::Seed,
            accepted: true,
            cbd_before: before,
            cbd_after: hist.entropy().unwrap_or(0.0),
        });
    }

    let mut rejected = Vec::new();
    let mut current = hist.entropy().unwrap_or(0.0);
    for (rank, &c) in ranked.iter().enumerate().skip(seed_count) {
        if selected.len() == budget {
            break;
        }
        hist.add_indices(concepts_of(rank));
        let tentative = hist.entropy().unwrap_or(0.0);
        let accepted = tentative > current + CBD_IMPROVEMENT_TOLERANCE;
        steps.push(SelectionStep {
            candidate: c,
            phase: Phase::Greedy,
            accepted,
            cbd_before: Some(current),
            cbd_after: if accepted { tentative } else { current },
        });
        if accepted {
            selected.push(c);
            current = tentative;
        } else {
            hist.undo_add_indices(concepts_of(rank));
            rejected.push(rank);
        }
    }

    let mut fill_count = 0;
    for &rank in &rejected {
        if selected.len() == budget {
            break;
        }
        hist.add_indices(concepts_of(rank));
        let after = hist.entropy().unwrap_or(0.0);
        let c = ranked[rank];
        steps.push(SelectionStep {
            candidate: c,
            phase: Phase::Fill,
            accepted: true,
            cbd_before: Some(current),
            cbd_after: after,
        });
        current = after;
        selected.push(c);
        fill_count += 1;
    }

    Ok(SelectionResult {
        selected,
        budget,
        seed_count,
        fill_count,
        provenance: Provenance {
            selector: Some(SelectorKind::Cbd),
            uncertainty_metric: Some(uncertainty.metric()),
            ..Provenance::default()
        },
        steps,
    })
}

pub fn select_top_uncertainty(uncertainty: &UncertaintyVector, budget: usize) -> Result<SelectionResult> {
    check_budget(budget, uncertainty.len())?;
    let mut selected = rank_by_uncertainty(uncertainty);
    selected.truncate(budget);
    Ok(SelectionResult {
        selected,
        budget,
        seed_count: 0,
        fill_count: 0,
        provenance: Provenance {
            selector: Some(SelectorKind::TopUncertainty),
            uncertainty_metric: Some(uncertainty.metric()),
            ..Provenance::default()
        },
        steps: Vec::new(),
    })
}

pub fn select_random(pool: usize, budget: usize, seed: u64) -> Result<SelectionResult> {
    check_budget(budget, pool)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let selected = rand::seq::index::sample(&mut rng, pool, budget).into_vec();
    Ok(SelectionResult {
        selected,
        budget,
        seed_count: 0,
        fill_count: 0,
        provenance: Provenance {
            selector: Some(SelectorKind::Random),
            seed: Some(seed),
            ..Provenance::default()
        },
        steps: Vec::new(),
    })
}
