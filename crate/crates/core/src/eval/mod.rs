//! Desk-scale experiment harness: controlled subsets, CBD/GD rank
//! correlation, timing tables and the normalized accuracy improvement.

mod rq1;
mod stats;
mod subsets;
mod timing;

pub use rq1::{run_rq1, CorrelationReport, CorrelationRow};
pub use stats::{average_ranks, spearman_rho};
pub use subsets::{build_controlled_subsets, ControlledSubsetPlan};
pub use timing::{
    diversity_timing_csv, loglog_slope, selection_timing_csv, time_diversity, time_selection, DiversityTiming,
    SelectionPool, SelectionTiming, TimingOptions, TimingStats,
};

use crate::error::{Error, Result};

/// Share of the achievable accuracy gain that fine-tuning realized, in
/// percent: `100 · (fine − orig) / (max − orig)`.
pub fn improvement_pct(acc_fine: f64, acc_orig: f64, acc_max: f64) -> Result<f64> {
    if acc_max == acc_orig {
        return Err(Error::DegenerateDenominator);
    }
    Ok(100.0 * (acc_fine - acc_orig) / (acc_max - acc_orig))
}
