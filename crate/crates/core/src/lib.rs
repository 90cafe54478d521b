//! Concept-based diverse subset selection.
//!
//! Inputs are scored for diversity by the entropy of the concepts they
//! depict. A classifier's internal representation of each input is mapped
//! into a shared vision-language space by an affine [`aligner`], matched to
//! its top-m concepts from a Representative Concept Set
//! ([`concept_space`]), and the pooled concept frequencies give the
//! Concept-Based Diversity score ([`diversity`]). The [`selector`] combines
//! that score with model [`uncertainty`] to pick a small, informative and
//! non-redundant subset within a labeling budget. [`eval`] reproduces the
//! correlation and timing analyses at desk scale.

pub mod aligner;
pub mod concept_space;
pub mod diversity;
pub mod embstore;
mod error;
pub mod eval;
pub mod selector;
pub mod synth;
pub mod uncertainty;

pub use aligner::{fit_aligner, map, r_squared_of, AlignerModel};
pub use concept_space::{assign_concepts, build_rcs, cosine_similarity_row, top_m, ConceptAssignment, ConceptMatcher, Rcs, ScoredConcept};
pub use diversity::{cbd_score, gd_score, ConceptHistogram};
pub use embstore::{ConceptSpace, EmbeddingMatrix, LabelVector, ProbabilityMatrix};
pub use error::{Error, Result};
pub use selector::{select_cbd, select_random, select_top_uncertainty, SelectionResult, SelectorKind};
pub use uncertainty::{datis_support, datis_uncertainty, margin_uncertainty, DatisConfig, UncertaintyMetric, UncertaintyVector};
